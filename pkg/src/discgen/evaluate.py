"""Quantitative and qualitative evaluation of a trained model.

The likelihood estimator draws K posterior samples per example and
aggregates importance weights log p(x|z) + log p(z) - log q(z|x) with a
logsumexp (a naive mean of ratios overflows immediately at image
dimensionality). Only the pixel Gaussian enters the density: the feature
terms are training regularizers, not part of the generative model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gaussians import log_density_array
from .models import ModelBundle, decode, encode
from .precision import default_dtype


@dataclass
class NllReport:
    estimates: np.ndarray  # per-example log-likelihood estimates
    k: int
    units: int  # scalar observations per example (C*H*W)

    @property
    def n(self) -> int:
        return int(self.estimates.shape[0])

    @property
    def per_unit_average(self) -> float:
        return float(np.mean(self.estimates) / self.units)

    @property
    def standard_error(self) -> float:
        if self.n < 2:
            return float("nan")
        return float(np.std(self.estimates, ddof=1) / math.sqrt(self.n))

    @property
    def per_unit_standard_error(self) -> float:
        return self.standard_error / self.units

    def to_line(self, split: str) -> str:
        return "\t".join([split, str(self.k), f"{self.per_unit_average:.6f}",
                          f"{self.per_unit_standard_error:.6f}", str(self.n)])


def importance_estimates(
    q_mean: np.ndarray,
    q_log_var: np.ndarray,
    decode_fn: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-example importance-sampled log p(x), shape [N].

    decode_fn maps a latent batch [N, D] to (mean, log_var) arrays shaped
    like x. Sample order does not affect the result beyond float addition
    in logsumexp's shifted sum.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = x.shape[0]
    x_axes = tuple(range(1, x.ndim))
    sigma = np.exp(0.5 * q_log_var)
    log_w = np.empty((k, n))
    for j in range(k):
        eps = rng.standard_normal(q_mean.shape).astype(q_mean.dtype)
        z = q_mean + sigma * eps
        mean, log_var = decode_fn(z)
        log_px = log_density_array(mean, log_var, x, sum_axes=x_axes)
        log_pz = log_density_array(np.zeros_like(z), np.zeros_like(z), z,
                                   sum_axes=tuple(range(1, z.ndim)))
        log_qz = log_density_array(q_mean, q_log_var, z, sum_axes=tuple(range(1, z.ndim)))
        log_w[j] = log_px + log_pz - log_qz
    shift = log_w.max(axis=0)
    # Sorting before the sum makes the estimate exactly invariant to the
    # order in which the K samples were drawn.
    w = np.sort(np.exp(log_w - shift), axis=0)
    return shift + np.log(np.sum(w, axis=0) / k)


def estimate_nll(bundle: ModelBundle, x: np.ndarray, k: int,
                 rng: np.random.Generator) -> NllReport:
    """Importance-sampled log-likelihood report for an image batch."""
    x = np.asarray(x, dtype=default_dtype())
    with ad.no_grad():
        q = encode(bundle, Tensor(x), "infer")
        q_mean, q_log_var = q.mean.data, q.log_var.data
        pixel_log_var = np.clip(bundle.pixel_log_var.data, -7.0, 2.0)

        def decode_fn(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            mean = decode(bundle, Tensor(z), "infer").data
            return mean, np.broadcast_to(pixel_log_var, mean.shape)

        estimates = importance_estimates(q_mean, q_log_var, decode_fn, x, k, rng)
    units = int(np.prod(bundle.arch.image_shape))
    return NllReport(estimates=estimates, k=k, units=units)


def elbo_inference(bundle: ModelBundle, x: np.ndarray, rng: np.random.Generator,
                   mc_samples: int = 1) -> np.ndarray:
    """Per-example single-draw bound estimates in inference mode, shape [N]."""
    x = np.asarray(x, dtype=default_dtype())
    with ad.no_grad():
        q = encode(bundle, Tensor(x), "infer")
        q_mean, q_log_var = q.mean.data, q.log_var.data
        pixel_log_var = np.clip(bundle.pixel_log_var.data, -7.0, 2.0)
        var = np.exp(q_log_var)
        kl = 0.5 * np.sum(q_mean ** 2 + var - 1.0 - q_log_var, axis=1)
        recon = np.zeros(x.shape[0])
        for _ in range(mc_samples):
            eps = rng.standard_normal(q_mean.shape).astype(q_mean.dtype)
            z = q_mean + np.exp(0.5 * q_log_var) * eps
            mean = decode(bundle, Tensor(z), "infer").data
            recon += log_density_array(mean, np.broadcast_to(pixel_log_var, mean.shape),
                                       x, sum_axes=tuple(range(1, x.ndim)))
        recon /= mc_samples
    return recon - kl


def sample_prior(bundle: ModelBundle, n: int, rng: np.random.Generator) -> np.ndarray:
    """Decode n standard-normal latent draws (inference mode)."""
    z = rng.standard_normal((n, bundle.arch.latent_dim)).astype(default_dtype())
    with ad.no_grad():
        return decode(bundle, Tensor(z), "infer").data


def reconstruct(bundle: ModelBundle, x: np.ndarray, rng: np.random.Generator | None = None,
                use_mean: bool = False) -> np.ndarray:
    """Posterior draw (or posterior mean) pushed back through the decoder."""
    x = np.asarray(x, dtype=default_dtype())
    with ad.no_grad():
        q = encode(bundle, Tensor(x), "infer")
        if use_mean:
            z = q.mean.data
        else:
            if rng is None:
                raise ValueError("stochastic reconstruction needs an rng")
            eps = rng.standard_normal(q.mean.shape).astype(q.mean.data.dtype)
            z = q.mean.data + np.exp(0.5 * q.log_var.data) * eps
        return decode(bundle, Tensor(z), "infer").data


def interpolate(bundle: ModelBundle, x_a: np.ndarray, x_b: np.ndarray,
                steps: int) -> np.ndarray:
    """Decode straight-line latent paths between posterior means.

    Returns [steps, P, C, H, W]. Endpoints run through the same batch shape
    and code path as mean-reconstruction, so frame 0 equals
    reconstruct(x_a, use_mean=True) bit-for-bit (and frame -1 likewise).
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    x_a = np.asarray(x_a, dtype=default_dtype())
    x_b = np.asarray(x_b, dtype=default_dtype())
    if x_a.shape != x_b.shape:
        raise ValueError(f"endpoint batches differ: {x_a.shape} vs {x_b.shape}")
    with ad.no_grad():
        mu_a = encode(bundle, Tensor(x_a), "infer").mean.data
        mu_b = encode(bundle, Tensor(x_b), "infer").mean.data
        frames = []
        for i in range(steps):
            alpha = i / (steps - 1)
            z = (1.0 - alpha) * mu_a + alpha * mu_b
            frames.append(decode(bundle, Tensor(z.astype(mu_a.dtype)), "infer").data)
    return np.stack(frames)
