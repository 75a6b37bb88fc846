"""Training objectives: the standard evidence lower bound and its
feature-regularized extension.

The maximized objective is

    total = l_z + l_x + sum_l lambda_l * l_d[l]

with l_z the negated KL to the standard-normal prior, l_x the expected
pixel log-likelihood under one (or more) reparametrized posterior draws,
and each l_d[l] a unit-variance Gaussian log-likelihood matching the
frozen classifier's layer-l activations of the reconstruction mean to
those of the data. The per-layer variances are folded into the weights
lambda_l; the training loop minimizes -total. All terms are per-batch
means (sum over units, mean over examples).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .gaussians import DiagonalGaussian, kl_to_standard_normal, log_density, reparameterize
from .models import ModelBundle, classify, decode, encode
from .precision import default_dtype

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class NonFiniteLossError(RuntimeError):
    """Raised when a forward pass produces a non-finite loss."""


@dataclass
class TrainConfig:
    lambdas: tuple[float, ...] | None = None  # None = 1/dim(d_l) per layer
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    stop_encoder_gradient: bool = False
    fix_pixel_variance: bool = False
    mc_samples: int = 1

    def __post_init__(self):
        if self.lambdas is not None and any(l < 0 for l in self.lambdas):
            raise ValueError("lambdas must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (batch normalization)")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


@dataclass
class LossBreakdown:
    l_z: float
    l_x: float
    l_d: tuple[float, ...]
    total: float
    loss: Tensor = field(repr=False)  # graph node for -total, to be minimized


def default_lambdas(bundle: ModelBundle) -> tuple[float, ...]:
    """1/dim(d_l) per regularized layer so layers contribute comparably."""
    return tuple(1.0 / d for d in feature_dims(bundle))


def feature_dims(bundle: ModelBundle) -> tuple[int, ...]:
    """Per-example element count of each regularized feature layer."""
    arch = bundle.arch
    c, h, w = arch.image_shape
    dims = []
    for layer in arch.feature_layers:
        if layer <= arch.stages:
            f = arch.stage_filters[layer - 1]
            dims.append(f * (h // 2 ** layer) * (w // 2 ** layer))
        else:
            dims.append(arch.dense_units)
    if arch.include_logit_loss:
        dims.append(arch.label_count)
    return tuple(dims)


def _pixel_log_var(bundle: ModelBundle, n: int, cfg: TrainConfig) -> Tensor:
    if cfg.fix_pixel_variance:
        return Tensor(np.zeros((n,) + tuple(bundle.arch.image_shape)), dtype=default_dtype())
    clamped = ad.clamp(bundle.pixel_log_var, -7.0, 2.0)
    return ad.expand_batch(clamped, n)


def _draw_eps(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    return Tensor(rng.standard_normal(shape), dtype=default_dtype())


def elbo(bundle: ModelBundle, x: Tensor, rng: np.random.Generator, cfg: TrainConfig) -> LossBreakdown:
    """Evidence lower bound; equals the regularized objective at lambda = 0."""
    return _objective(bundle, x, rng, cfg, lambdas=None)


def discriminative_loss(bundle: ModelBundle, x: Tensor, rng: np.random.Generator,
                        cfg: TrainConfig) -> LossBreakdown:
    """ELBO plus classifier-feature reconstruction terms (frozen classifier)."""
    lambdas = cfg.lambdas if cfg.lambdas is not None else default_lambdas(bundle)
    expected = bundle.arch.num_feature_terms
    if len(lambdas) != expected:
        raise ValueError(f"lambda vector has {len(lambdas)} entries, model defines {expected} feature terms")
    return _objective(bundle, x, rng, cfg, lambdas=tuple(lambdas))


def _objective(bundle: ModelBundle, x: Tensor, rng: np.random.Generator, cfg: TrainConfig,
               lambdas: tuple[float, ...] | None) -> LossBreakdown:
    n = x.shape[0]
    if n < 2:
        raise ShapeError("objective: batch size must be >= 2")
    q = encode(bundle, x, "train")
    kl = kl_to_standard_normal(q)
    l_z = ad.div(ad.mul(kl, -1.0), float(n))

    targets: list[np.ndarray] | None = None
    if lambdas is not None:
        with ad.no_grad():
            feats, logits = classify(bundle, x, "infer")
            targets = [feats[i - 1].data for i in bundle.arch.feature_layers]
            if bundle.arch.include_logit_loss:
                targets.append(logits.data)

    l_x_terms: list[Tensor] = []
    l_d_terms: list[list[Tensor]] = [[] for _ in (lambdas or ())]
    for _ in range(cfg.mc_samples):
        eps = _draw_eps(rng, q.mean.shape)
        z = reparameterize(q, eps)
        x_hat = decode(bundle, z, "train")
        pixel = DiagonalGaussian(x_hat, _pixel_log_var(bundle, n, cfg))
        l_x_terms.append(ad.div(log_density(pixel, x), float(n)))

        if lambdas is not None:
            if cfg.stop_encoder_gradient:
                x_hat_d = decode(bundle, ad.stop_gradient(z), "train")
            else:
                x_hat_d = x_hat
            feats_hat, logits_hat = classify(bundle, x_hat_d, "infer")
            preds = [feats_hat[i - 1] for i in bundle.arch.feature_layers]
            if bundle.arch.include_logit_loss:
                preds.append(logits_hat)
            for l, (pred, target) in enumerate(zip(preds, targets)):
                l_d_terms[l].append(_unit_gaussian_match(pred, target, n))

    l_x = _mean_terms(l_x_terms)
    total = ad.add(l_z, l_x)
    l_d_nodes: list[Tensor] = []
    if lambdas is not None:
        for l, lam in enumerate(lambdas):
            node = _mean_terms(l_d_terms[l])
            l_d_nodes.append(node)
            if lam != 0.0:
                total = ad.add(total, ad.mul(node, float(lam)))
    loss = ad.mul(total, -1.0)

    return LossBreakdown(
        l_z=float(l_z.data),
        l_x=float(l_x.data),
        l_d=tuple(float(t.data) for t in l_d_nodes),
        total=float(total.data),
        loss=loss,
    )


def _unit_gaussian_match(pred: Tensor, target: np.ndarray, n: int) -> Tensor:
    """Mean over batch of log N(target | pred, I) summed over units."""
    dim = int(np.prod(target.shape[1:]))
    residual = ad.tensor_sum(ad.square(ad.sub(Tensor(target), pred)))
    return ad.sub(ad.div(ad.mul(residual, -0.5), float(n)), dim * _HALF_LOG_2PI)


def _mean_terms(terms: list[Tensor]) -> Tensor:
    node = terms[0]
    for t in terms[1:]:
        node = ad.add(node, t)
    if len(terms) > 1:
        node = ad.div(node, float(len(terms)))
    return node


def check_finite(breakdown: LossBreakdown, context: str) -> None:
    if math.isfinite(breakdown.total):
        return
    bad = ad.first_nonfinite(breakdown.loss)
    where = f"node op={bad.op!r} name={bad.name!r} shape={bad.shape}" if bad is not None else "unknown node"
    raise NonFiniteLossError(f"non-finite loss at {context}; first non-finite {where}")
