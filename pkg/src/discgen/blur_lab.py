"""Why feature-matched reconstructions develop patterned textures.

A plain convolutional autoencoder is overfit to a fixed batch of 100
examples under a feature-matching loss: the squared error between the
reconstruction's activations after the first two classifier layers and the
input's activations at the same depth. The control matches the activations
as-is; the variant matches a Gaussian-blurred copy of them. The two runs
share initialization and differ only in the target-blurring step. The
blurred run trades pixel fidelity for blurred-feature fidelity and its
reconstructions pick up high-frequency patterning, quantified here by the
mean squared response of a 3x3 Laplacian filter.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .models import ArchConfig, Decoder, Encoder, ModelBundle, classify
from .objectives import NonFiniteLossError
from .optim import AdamState, adam_step
from .gaussians import make_rng
from .precision import default_dtype

LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass
class BlurExperimentConfig:
    batch_size: int = 100
    classifier_depth: int = 2
    sigma: float = 1.0
    steps: int = 400
    learning_rate: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        if self.classifier_depth < 1:
            raise ValueError("classifier_depth must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def shared_hash(self) -> str:
        """Hash of everything except the target-blurring step itself."""
        text = f"{self.batch_size}|{self.classifier_depth}|{self.steps}|{self.learning_rate}|{self.seed}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class RunMetrics:
    own_loss_initial: float
    own_loss_final: float
    pixel_mse: float
    hf_energy: float
    reconstructions: np.ndarray = field(repr=False)


@dataclass
class BlurExperimentResult:
    control: RunMetrics
    blurred: RunMetrics
    control_loss_on_blurred_objective: float
    input_hf_energy: float
    config_hash: str


def gaussian_blur(feature_map: np.ndarray, sigma: float) -> np.ndarray:
    """Separable normalized Gaussian blur per channel, replicate edges.

    Kernel radius is ceil(3*sigma); sigma = 0 returns the input unchanged
    (bit-identical).
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return feature_map
    kernel = blur_kernel(sigma)
    blurred = _correlate_axis(feature_map, kernel, axis=2)
    return _correlate_axis(blurred, kernel, axis=3)


def blur_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def _correlate_axis(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (kernel.shape[0] - 1) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (radius, radius)
    xp = np.pad(x, pad, mode="edge")
    out = np.zeros_like(x, dtype=np.float64)
    for i, w in enumerate(kernel):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(i, i + x.shape[axis])
        out += w * xp[tuple(sl)]
    return out.astype(x.dtype)


def high_frequency_energy(images: np.ndarray) -> float:
    """Mean squared response of a 3x3 Laplacian over the valid interior."""
    k = LAPLACIAN.astype(images.dtype)
    n, c, h, w = images.shape
    out = np.zeros((n, c, h - 2, w - 2), dtype=images.dtype)
    for i in range(3):
        for j in range(3):
            if k[i, j] != 0.0:
                out += k[i, j] * images[:, :, i : i + h - 2, j : j + w - 2]
    return float(np.mean(out.astype(np.float64) ** 2))


class ConvAutoencoder:
    """model-zoo encoder/decoder stacks with a deterministic bottleneck."""

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        self.encoder = Encoder(arch, rng)
        self.decoder = Decoder(arch, rng)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        z = self.encoder(x, mode).mean
        return self.decoder(z, mode)

    def params(self) -> list[Parameter]:
        return self.encoder.params() + self.decoder.params()


def run_blur_experiment(cfg: BlurExperimentConfig, bundle: ModelBundle,
                        images: np.ndarray) -> BlurExperimentResult:
    """Train the control and blurred-target autoencoders on one batch.

    ``bundle`` supplies the frozen classifier; ``images`` must hold at
    least cfg.batch_size examples (the first batch_size are used).
    """
    if images.shape[0] < cfg.batch_size:
        raise ValueError(f"need {cfg.batch_size} examples, got {images.shape[0]}")
    depth = cfg.classifier_depth
    if depth > bundle.arch.stages + 1:
        raise ValueError(f"classifier_depth {depth} exceeds available layers")
    bundle.set_classifier_trainable(False)
    x = np.asarray(images[: cfg.batch_size], dtype=default_dtype())

    with ad.no_grad():
        feats, _ = classify(bundle, Tensor(x), "infer", depth=depth)
        target_plain = feats[depth - 1].data
    target_blurred = gaussian_blur(target_plain, cfg.sigma)

    control = _train_feature_ae(cfg, bundle, x, target_plain)
    blurred = _train_feature_ae(cfg, bundle, x, target_blurred)
    control_on_blurred = _feature_loss_value(bundle, control.reconstructions,
                                             target_blurred, depth)

    return BlurExperimentResult(
        control=control,
        blurred=blurred,
        control_loss_on_blurred_objective=control_on_blurred,
        input_hf_energy=high_frequency_energy(x),
        config_hash=cfg.shared_hash(),
    )


def _train_feature_ae(cfg: BlurExperimentConfig, bundle: ModelBundle,
                      x: np.ndarray, target: np.ndarray) -> RunMetrics:
    arch = bundle.arch
    ae = ConvAutoencoder(arch, make_rng(cfg.seed, 0))
    params = ae.params()
    state = AdamState()
    x_t = Tensor(x)
    target_t = Tensor(target)
    scale = 1.0 / target.size

    initial = None
    for step in range(cfg.steps):
        ad.zero_grad(params)
        x_hat = ae(x_t, "train")
        feats, _ = classify(bundle, x_hat, "infer", depth=cfg.classifier_depth)
        diff = ad.sub(feats[cfg.classifier_depth - 1], target_t)
        loss = ad.mul(ad.tensor_sum(ad.square(diff)), scale)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NonFiniteLossError(f"feature autoencoder diverged at step {step}")
        if initial is None:
            initial = value
        ad.backward(loss)
        adam_step(params, state, cfg.learning_rate)

    # Final metrics come from the emitted (inference-mode) reconstructions;
    # after hundreds of steps on one fixed batch the running statistics have
    # converged to the batch statistics.
    with ad.no_grad():
        recon = ae(x_t, "infer").data
    return RunMetrics(
        own_loss_initial=initial,
        own_loss_final=_feature_loss_value(bundle, recon, target, cfg.classifier_depth),
        pixel_mse=float(np.mean((recon.astype(np.float64) - x) ** 2)),
        hf_energy=high_frequency_energy(recon),
        reconstructions=recon,
    )


def _feature_loss_value(bundle: ModelBundle, recon: np.ndarray,
                        target: np.ndarray, depth: int) -> float:
    with ad.no_grad():
        feats, _ = classify(bundle, Tensor(recon), "infer", depth=depth)
    diff = feats[depth - 1].data - target
    return float(np.sum(diff.astype(np.float64) ** 2) / target.size)
