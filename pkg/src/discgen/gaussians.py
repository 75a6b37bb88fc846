"""Diagonal Gaussian machinery shared by the prior, posterior and likelihoods.

Log-variance (not sigma) is the stored quantity, clamped to [-7, 2] at
construction so a collapsing variance cannot blow up the log-likelihood.
All three operations (reparametrized sampling, KL to the standard normal,
log density) are differentiable graph compositions; numpy twins of the
densities are provided for graph-free evaluation paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .precision import default_dtype

LOGVAR_MIN = -7.0
LOGVAR_MAX = 2.0

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class DiagonalGaussian:
    """Mean and log-variance tensors of identical shape."""

    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise ShapeError(
                f"DiagonalGaussian: mean {self.mean.shape} vs log_var {self.log_var.shape}"
            )
        self.log_var = ad.clamp(self.log_var, LOGVAR_MIN, LOGVAR_MAX)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic generator; distinct streams derive from (seed, stream)."""
    return np.random.default_rng([stream, seed])


def sample_standard_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    """I.i.d. unit-normal draws as a constant (non-differentiable) tensor."""
    return Tensor(rng.standard_normal(shape), dtype=default_dtype())


def reparameterize(q: DiagonalGaussian, eps: Tensor) -> Tensor:
    """z = mean + exp(log_var / 2) * eps; gradients flow to mean and log_var."""
    if eps.shape != q.mean.shape:
        raise ShapeError(f"reparameterize: eps {eps.shape} vs mean {q.mean.shape}")
    sigma = ad.exp(ad.mul(q.log_var, 0.5))
    return ad.add(q.mean, ad.mul(sigma, eps))


def kl_to_standard_normal(q: DiagonalGaussian) -> Tensor:
    """KL(q || N(0, I)): sum over dimensions of (mu^2 + var - 1 - log var)/2."""
    var = ad.exp(q.log_var)
    per_dim = ad.sub(ad.sub(ad.add(ad.square(q.mean), var), 1.0), q.log_var)
    return ad.mul(ad.tensor_sum(per_dim), 0.5)


def log_density(p: DiagonalGaussian, x: Tensor) -> Tensor:
    """Sum over dimensions of the diagonal Gaussian log density at x."""
    if x.shape != p.mean.shape:
        raise ShapeError(f"log_density: x {x.shape} vs mean {p.mean.shape}")
    residual = ad.square(ad.sub(x, p.mean))
    quad = ad.div(residual, ad.mul(ad.exp(p.log_var), 2.0))
    per_dim = ad.sub(ad.sub(ad.mul(quad, -1.0), ad.mul(p.log_var, 0.5)), _HALF_LOG_2PI)
    return ad.tensor_sum(per_dim)


# Graph-free numpy twins used by evaluation code and test oracles.


def log_density_array(mean: np.ndarray, log_var: np.ndarray, x: np.ndarray,
                      sum_axes: tuple[int, ...] | None = None) -> np.ndarray:
    per_dim = -_HALF_LOG_2PI - 0.5 * log_var - (x - mean) ** 2 / (2.0 * np.exp(log_var))
    if sum_axes is None:
        return np.sum(per_dim)
    return np.sum(per_dim, axis=sum_axes)


def kl_to_standard_normal_array(mean: np.ndarray, log_var: np.ndarray) -> float:
    var = np.exp(log_var)
    return float(0.5 * np.sum(mean ** 2 + var - 1.0 - log_var))
