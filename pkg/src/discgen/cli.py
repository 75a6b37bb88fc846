"""Command-line entry point: every workflow is a subcommand driven by a
declarative config file, producing reproducible artifacts.

Subcommands: train-classifier, train-vae, sample, reconstruct, interpolate,
eval-nll, blur-experiment, gradcheck. Every run writes its fully resolved
config (plus versions and seed) into the output directory; identical
resolved configs produce byte-identical outputs apart from wall-clock
fields. Exit code 0 means all outputs were written; failures print one
machine-parseable line to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import checkpoint as ckpt
from . import config as cfgmod
from . import kernels
from .blur_lab import BlurExperimentConfig, run_blur_experiment
from .data import (LabeledImageSet, ShapeSpec, generate_shapes,
                   load_binary_records, write_image_grid)
from .evaluate import estimate_nll, interpolate, reconstruct, sample_prior
from .gaussians import make_rng
from .models import ArchConfig, init_bundle
from .objectives import TrainConfig
from .optim import classifier_accuracy, train, train_classifier
from .precision import precision_name


class CliError(RuntimeError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="discgen",
        description="Feature-regularized VAE workflows (training, generation, "
                    "likelihood evaluation, blurred-feature experiment).",
    )
    parser.add_argument("--version", action="version", version=f"discgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, checkpoint: bool = False, classifier: bool = False):
        p.add_argument("--config", type=str, default=None, help="config file (INI)")
        p.add_argument("--seed", type=int, default=None, help="override run seed")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--lambda", dest="lam", type=str, default=None,
                       help="per-layer weights, comma-separated (or 'default')")
        p.add_argument("--stop-encoder-grad", action="store_true",
                       help="block feature-term gradients from the encoder")
        p.add_argument("--k", type=int, default=None, help="importance samples per example")
        p.add_argument("--sigma", type=float, default=None, help="feature blur strength")
        if checkpoint:
            p.add_argument("--checkpoint", type=str, required=True, help="model checkpoint")
        if classifier:
            p.add_argument("--classifier", type=str, default=None,
                           help="classifier checkpoint path")

    common(sub.add_parser("train-classifier", help="train the attribute classifier"))
    common(sub.add_parser("train-vae", help="train a VAE (lambda=0 for the plain bound)"),
           classifier=True)
    common(sub.add_parser("sample", help="decode prior draws to an image grid"), checkpoint=True)
    common(sub.add_parser("reconstruct", help="reconstruct held-out examples"), checkpoint=True)
    common(sub.add_parser("interpolate", help="latent straight-line image sequences"),
           checkpoint=True)
    common(sub.add_parser("eval-nll", help="importance-sampled likelihood per split"),
           checkpoint=True)
    common(sub.add_parser("blur-experiment", help="blurred-feature-target autoencoder pair"),
           classifier=True)
    common(sub.add_parser("gradcheck", help="run the autodiff verification suite"))
    return parser


def load_run_config(args) -> dict:
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.default_config()
    cfgmod.apply_overrides(cfg, args)
    return cfg


def prepare_out_dir(cfg: dict, command: str) -> Path:
    out = cfg["run"]["out"]
    if not out:
        raise CliError("no output directory: pass --out or set [run] out")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "discgen": __version__,
        "numpy": np.__version__,
        "backend": kernels.active_backend(),
        "precision": precision_name(),
        "command": command,
    }
    (out_dir / "config.resolved.ini").write_text(cfgmod.resolved_text(cfg, meta))
    return out_dir


def dataset_from_config(cfg: dict, split: str) -> LabeledImageSet:
    d = cfg["dataset"]
    if d["source"] == "shapes":
        counts = {"train": d["train_count"], "valid": d["valid_count"], "test": d["test_count"]}
        spec = ShapeSpec(canvas=d["canvas"], channels=d["channels"], counts=counts,
                         seed=d["data_seed"], min_size=d["min_size"], max_size=d["max_size"])
        return generate_shapes(spec, split)
    if d["source"] == "binary":
        if not d["path"]:
            raise CliError("[dataset] path required for source=binary")
        num_classes = d["num_classes"] or None
        full = load_binary_records(d["path"], d["channels"], d["height"], d["width"],
                                   d["label_bytes"], num_classes)
        return _split_binary(full, split, d["valid_count"], d["test_count"])
    raise CliError(f"unknown dataset source {d['source']!r}")


def _split_binary(full: LabeledImageSet, split: str, valid_count: int,
                  test_count: int) -> LabeledImageSet:
    n = len(full)
    holdout = valid_count + test_count
    if holdout >= n:
        raise CliError(f"holdout {holdout} does not fit dataset of {n}")
    spans = {
        "train": np.arange(0, n - holdout),
        "valid": np.arange(n - holdout, n - test_count),
        "test": np.arange(n - test_count, n),
    }
    if split not in spans:
        raise CliError(f"unknown split {split!r}")
    out = full.subset(spans[split])
    out.split = split
    return out


def arch_from_config(cfg: dict) -> ArchConfig:
    d = cfg["dataset"]
    a = cfg["arch"]
    if d["source"] == "shapes":
        image_shape = (d["channels"], d["canvas"], d["canvas"])
        label_count = 5
    else:
        image_shape = (d["channels"], d["height"], d["width"])
        label_count = d["num_classes"]
        if not label_count:
            raise CliError("[dataset] num_classes required for source=binary models")
    return ArchConfig(
        image_shape=image_shape,
        latent_dim=a["latent"],
        base_filters=a["base_filters"],
        stages=a["stages"],
        label_count=label_count,
        dense_units=a["dense_units"],
        feature_layers=cfgmod.parse_int_list(a["feature_layers"]),
        include_logit_loss=a["include_logit_loss"],
    )


def train_config_from(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        lambdas=cfgmod.parse_lambdas(t["lambdas"]),
        learning_rate=t["learning_rate"],
        beta1=t["beta1"],
        beta2=t["beta2"],
        adam_eps=t["adam_eps"],
        batch_size=t["batch_size"],
        epochs=t["epochs"],
        seed=cfg["run"]["seed"],
        stop_encoder_gradient=t["stop_encoder_grad"],
        fix_pixel_variance=t["fix_pixel_variance"],
        mc_samples=t["mc_samples"],
    )


def cmd_train_classifier(args) -> int:
    cfg = load_run_config(args)
    out_dir = prepare_out_dir(cfg, "train-classifier")
    train_set = dataset_from_config(cfg, "train")
    if not train_set.labels.any():
        raise CliError("dataset has no labels; classifier training needs them")
    valid_set = dataset_from_config(cfg, "valid")
    bundle = init_bundle(arch_from_config(cfg), make_rng(cfg["run"]["seed"]))
    tc = train_config_from(cfg)
    train_classifier(bundle, train_set, tc, metrics_path=out_dir / "classifier_metrics.tsv",
                     log=print)
    accuracies = classifier_accuracy(bundle, valid_set)
    lines = ["attribute\taccuracy"]
    lines += [f"{i}\t{a:.6f}" for i, a in enumerate(accuracies)]
    lines.append(f"mean\t{accuracies.mean():.6f}")
    (out_dir / "classifier_accuracy.tsv").write_text("\n".join(lines) + "\n")
    ckpt.save_classifier_checkpoint(bundle, out_dir / "classifier.dgn")
    print(f"held-out accuracy mean {accuracies.mean():.4f}")
    return 0


def cmd_train_vae(args) -> int:
    cfg = load_run_config(args)
    out_dir = prepare_out_dir(cfg, "train-vae")
    train_set = dataset_from_config(cfg, "train")
    bundle = init_bundle(arch_from_config(cfg), make_rng(cfg["run"]["seed"]))
    tc = train_config_from(cfg)
    lambdas = tc.lambdas
    regularized = lambdas is None or any(l > 0 for l in lambdas)
    if regularized:
        if not args.classifier:
            raise CliError("regularized training (lambda > 0) requires --classifier PATH")
        ckpt.load_classifier_into(bundle, args.classifier)
    train(bundle, train_set, tc, regularized=regularized,
          metrics_path=out_dir / "metrics.tsv", log=print)
    ckpt.save_checkpoint(bundle, out_dir / "vae.dgn")
    return 0


def cmd_sample(args) -> int:
    cfg = load_run_config(args)
    out_dir = prepare_out_dir(cfg, "sample")
    bundle = ckpt.load_checkpoint(args.checkpoint)
    n = cfg["eval"]["sample_count"]
    rng = make_rng(cfg["run"]["seed"], 100)
    z = rng.standard_normal((n, bundle.arch.latent_dim))
    with ad.no_grad():
        from .models import decode
        images = decode(bundle, ad.Tensor(z), "infer").data
    side = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / side))
    pad = rows * side - n
    if pad:
        images = np.concatenate([images, np.full((pad,) + images.shape[1:], -1.0)], axis=0)
    write_image_grid(images, rows, side, out_dir / "samples.ppm")
    ckpt.write_tensor_file(out_dir / "latents.dgn", {"z": z.astype(np.float32)})
    return 0


def cmd_reconstruct(args) -> int:
    cfg = load_run_config(args)
    out_dir = prepare_out_dir(cfg, "reconstruct")
    bundle = ckpt.load_checkpoint(args.checkpoint)
    data = dataset_from_config(cfg, "valid")
    n = min(cfg["eval"]["recon_count"], len(data))
    x = data.images[:n]
    rng = make_rng(cfg["run"]["seed"], 101)
    recon = reconstruct(bundle, x, rng=rng, use_mean=False)
    cols = min(8, n)
    rows_per_band = int(np.ceil(n / cols))
    stacked = []
    for band in range(rows_per_band):
        stacked.append(x[band * cols : (band + 1) * cols])
        stacked.append(recon[band * cols : (band + 1) * cols])
    grid = np.concatenate(stacked, axis=0)
    write_image_grid(grid, 2 * rows_per_band, cols, out_dir / "reconstructions.ppm")
    return 0


def cmd_interpolate(args) -> int:
    cfg = load_run_config(args)
    out_dir = prepare_out_dir(cfg, "interpolate")
    bundle = ckpt.load_checkpoint(args.checkpoint)
    data = dataset_from_config(cfg, "valid")
    pairs = cfg["eval"]["interp_pairs"]
    steps = cfg["eval"]["interp_steps"]
    if len(data) < 2 * pairs:
        raise CliError(f"need {2 * pairs} validation images, have {len(data)}")
    x_a = data.images[:pairs]
    x_b = data.images[pairs : 2 * pairs]
    frames = interpolate(bundle, x_a, x_b, steps)  # [steps, pairs, C, H, W]
    grid = np.concatenate([frames[:, p] for p in range(pairs)], axis=0)
    write_image_grid(grid, pairs, steps, out_dir / "interpolations.ppm")
    return 0


def cmd_eval_nll(args) -> int:
    cfg = load_run_config(args)
    out_dir = prepare_out_dir(cfg, "eval-nll")
    bundle = ckpt.load_checkpoint(args.checkpoint)
    k = cfg["eval"]["k"]
    lines = ["split\tk\tper_unit_average\tper_unit_se\tn"]
    for i, split in enumerate(s.strip() for s in cfg["eval"]["splits"].split(",")):
        data = dataset_from_config(cfg, split)
        report = estimate_nll(bundle, data.images, k, make_rng(cfg["run"]["seed"], 200 + i))
        lines.append(report.to_line(split))
        print(lines[-1])
    (out_dir / "nll.tsv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_blur_experiment(args) -> int:
    cfg = load_run_config(args)
    out_dir = prepare_out_dir(cfg, "blur-experiment")
    if not args.classifier:
        raise CliError("blur-experiment requires --classifier PATH")
    data = dataset_from_config(cfg, "train")
    b = cfg["blur"]

    # A full VAE checkpoint supplies both the frozen classifier and a
    # reconstruction column for the grid; a classifier-only checkpoint is
    # loaded into a fresh bundle.
    full = _is_full_checkpoint(args.classifier)
    if full:
        bundle = ckpt.load_checkpoint(args.classifier)
    else:
        bundle = init_bundle(arch_from_config(cfg), make_rng(cfg["run"]["seed"]))
        ckpt.load_classifier_into(bundle, args.classifier)

    header = ["seed", "sigma", "config_hash",
              "control_initial", "control_final", "control_pixel_mse", "control_hf",
              "blurred_initial", "blurred_final", "blurred_pixel_mse", "blurred_hf",
              "control_on_blurred_objective", "input_hf"]
    lines = ["\t".join(header)]
    first_result = None
    for seed in cfgmod.parse_int_list(b["seeds"]):
        bcfg = BlurExperimentConfig(batch_size=b["batch"], classifier_depth=b["depth"],
                                    sigma=b["sigma"], steps=b["steps"],
                                    learning_rate=b["learning_rate"], seed=seed)
        result = run_blur_experiment(bcfg, bundle, data.images)
        row = [str(seed), f"{b['sigma']:.4f}", result.config_hash,
               f"{result.control.own_loss_initial:.6f}", f"{result.control.own_loss_final:.6f}",
               f"{result.control.pixel_mse:.6f}", f"{result.control.hf_energy:.6f}",
               f"{result.blurred.own_loss_initial:.6f}", f"{result.blurred.own_loss_final:.6f}",
               f"{result.blurred.pixel_mse:.6f}", f"{result.blurred.hf_energy:.6f}",
               f"{result.control_loss_on_blurred_objective:.6f}",
               f"{result.input_hf_energy:.6f}"]
        lines.append("\t".join(row))
        print(lines[-1])
        if first_result is None:
            first_result = result
    (out_dir / "blur_metrics.tsv").write_text("\n".join(lines) + "\n")

    n_show = min(8, cfg["blur"]["batch"])
    x = data.images[:n_show].astype(np.float32)
    columns = [x, first_result.control.reconstructions[:n_show]]
    if full:
        columns.append(reconstruct(bundle, x, rng=make_rng(cfg["run"]["seed"], 300)))
    columns.append(first_result.blurred.reconstructions[:n_show])
    grid = np.concatenate([np.stack([col[i] for col in columns]) for i in range(n_show)], axis=0)
    write_image_grid(grid, n_show, len(columns), out_dir / "blur_grid.ppm")
    return 0


def _is_full_checkpoint(path: str) -> bool:
    tensors = ckpt.read_tensor_file(path)
    return any(name.startswith("encoder.") for name in tensors)


def cmd_gradcheck(args) -> int:
    cfg = load_run_config(args)
    out_dir = prepare_out_dir(cfg, "gradcheck")
    from .verification import run_verification

    results = run_verification(cfg["run"]["seed"])
    lines = ["op\tmax_rel_error\ttolerance\tstatus"]
    ok = True
    for name, err, tol in results:
        status = "pass" if err <= tol else "FAIL"
        ok &= err <= tol
        lines.append(f"{name}\t{err:.3e}\t{tol:.1e}\t{status}")
        print(lines[-1])
    (out_dir / "gradcheck.tsv").write_text("\n".join(lines) + "\n")
    return 0 if ok else 1


_COMMANDS = {
    "train-classifier": cmd_train_classifier,
    "train-vae": cmd_train_vae,
    "sample": cmd_sample,
    "reconstruct": cmd_reconstruct,
    "interpolate": cmd_interpolate,
    "eval-nll": cmd_eval_nll,
    "blur-experiment": cmd_blur_experiment,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # single-line machine-parseable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
