"""Adam optimizer and the deterministic training loop.

Epoch order, minibatch shuffling and posterior noise all derive from the
run seed through independent named streams, so two runs with the same
configuration produce bit-identical parameters and metrics (wall-clock
columns aside).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .gaussians import make_rng
from .models import ModelBundle, classify
from .objectives import (LossBreakdown, NonFiniteLossError, TrainConfig,
                         check_finite, discriminative_loss, elbo)
from .data import LabeledImageSet, minibatches
from .precision import default_dtype

# Stream indices for seed derivation; keep stable across versions.
STREAM_SHUFFLE = 1
STREAM_NOISE = 2
STREAM_INIT = 0


@dataclass
class AdamState:
    t: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One Adam update from the gradients currently on ``params``.

    Non-trainable parameters are skipped entirely; their moments stay
    untouched so a later unfreeze resumes cleanly.
    """
    b1, b2 = betas
    state.t += 1
    t = state.t
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for p in params:
        if not p.trainable:
            continue
        key = id(p)
        if key not in state.m:
            state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        g = p.grad
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class EpochRecord:
    epoch: int
    breakdown_means: LossBreakdown
    wall_seconds: float


def metrics_header(num_feature_terms: int) -> str:
    cols = ["epoch", "l_z", "l_x"]
    cols += [f"l_d{i}" for i in range(num_feature_terms)]
    cols += ["total", "wall_seconds"]
    return "\t".join(cols)


def metrics_line(record: EpochRecord) -> str:
    b = record.breakdown_means
    parts = [str(record.epoch), f"{b.l_z:.6f}", f"{b.l_x:.6f}"]
    parts += [f"{v:.6f}" for v in b.l_d]
    parts += [f"{b.total:.6f}", f"{record.wall_seconds:.3f}"]
    return "\t".join(parts)


def train(bundle: ModelBundle, dataset: LabeledImageSet, cfg: TrainConfig,
          regularized: bool = False, metrics_path: str | Path | None = None,
          log=None) -> list[EpochRecord]:
    """Train the VAE parameters of ``bundle`` in place; returns epoch records.

    With ``regularized`` the feature-matching terms are added and the
    classifier is frozen for the duration (its parameters are bit-identical
    afterwards). The classifier must then already be trained.
    """
    if dataset.images.shape[0] == 0:
        raise ValueError("dataset is empty")
    objective = discriminative_loss if regularized else elbo
    if regularized:
        bundle.set_classifier_trainable(False)

    params = bundle.vae_params()
    if cfg.fix_pixel_variance:
        bundle.pixel_log_var.set_trainable(False)
    state = AdamState()
    noise_rng = make_rng(cfg.seed, STREAM_NOISE)
    records: list[EpochRecord] = []
    n_terms = bundle.arch.num_feature_terms if regularized else 0
    lines = [metrics_header(n_terms)]

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        shuffle_rng = make_rng(cfg.seed, STREAM_SHUFFLE + 1000 * epoch)
        sums = None
        count = 0
        for idx in minibatches(dataset.images.shape[0], cfg.batch_size, shuffle_rng):
            x = ad.Tensor(dataset.images[idx], dtype=default_dtype())
            ad.zero_grad(params)
            breakdown = objective(bundle, x, noise_rng, cfg)
            check_finite(breakdown, f"epoch {epoch} batch {count}")
            ad.backward(breakdown.loss)
            adam_step(params, state, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps)
            vec = np.array([breakdown.l_z, breakdown.l_x, *breakdown.l_d, breakdown.total])
            sums = vec if sums is None else sums + vec
            count += 1
        means = sums / count
        record = EpochRecord(
            epoch=epoch,
            breakdown_means=LossBreakdown(
                l_z=float(means[0]), l_x=float(means[1]),
                l_d=tuple(float(v) for v in means[2:-1]),
                total=float(means[-1]), loss=None,
            ),
            wall_seconds=time.perf_counter() - started,
        )
        records.append(record)
        lines.append(metrics_line(record))
        if log is not None:
            log(lines[-1])

    if metrics_path is not None:
        Path(metrics_path).write_text("\n".join(lines) + "\n")
    return records


def train_classifier(bundle: ModelBundle, dataset: LabeledImageSet, cfg: TrainConfig,
                     metrics_path: str | Path | None = None, log=None) -> list[str]:
    """Multi-label sigmoid cross-entropy training of the classifier stack."""
    if dataset.labels.shape[1] != bundle.arch.label_count:
        raise ValueError(
            f"dataset has {dataset.labels.shape[1]} labels, model expects {bundle.arch.label_count}")
    bundle.set_classifier_trainable(True)
    params = bundle.classifier_params()
    state = AdamState()
    lines = ["epoch\tloss\twall_seconds"]
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        shuffle_rng = make_rng(cfg.seed, STREAM_SHUFFLE + 1000 * epoch)
        total = 0.0
        count = 0
        for idx in minibatches(dataset.images.shape[0], cfg.batch_size, shuffle_rng):
            x = ad.Tensor(dataset.images[idx], dtype=default_dtype())
            targets = dataset.labels[idx]
            ad.zero_grad(params)
            _, logits = classify(bundle, x, "train")
            loss = ad.div(ad.sigmoid_cross_entropy(logits, targets), float(len(idx)))
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLossError(f"classifier loss non-finite at epoch {epoch}")
            ad.backward(loss)
            adam_step(params, state, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps)
            total += value
            count += 1
        lines.append(f"{epoch}\t{total / count:.6f}\t{time.perf_counter() - started:.3f}")
        if log is not None:
            log(lines[-1])
    if metrics_path is not None:
        Path(metrics_path).write_text("\n".join(lines) + "\n")
    return lines


def classifier_accuracy(bundle: ModelBundle, dataset: LabeledImageSet,
                        batch_size: int = 200) -> np.ndarray:
    """Per-attribute held-out accuracy of thresholded sigmoid predictions."""
    n = dataset.images.shape[0]
    correct = np.zeros(bundle.arch.label_count)
    with ad.no_grad():
        for start in range(0, n, batch_size):
            x = ad.Tensor(dataset.images[start : start + batch_size], dtype=default_dtype())
            _, logits = classify(bundle, x, "infer")
            predictions = (logits.data > 0.0).astype(np.float32)
            correct += (predictions == dataset.labels[start : start + batch_size]).sum(axis=0)
    return correct / n
