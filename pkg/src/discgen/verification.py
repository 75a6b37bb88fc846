"""Self-contained autodiff verification: every differentiable operation
checked against central finite differences at 64-bit, plus the
conv/transposed-conv adjoint identity."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .models import ArchConfig, init_bundle
from .objectives import TrainConfig, discriminative_loss
from .gaussians import make_rng
from .precision import precision

GRAD_TOL = 1e-4
COMPOSITE_TOL = 1e-3
ADJOINT_TOL = 1e-10


def run_verification(seed: int = 0) -> list[tuple[str, float, float]]:
    """Returns (check name, max relative error, tolerance) per check."""
    with precision("f64"):
        results = []
        rng = np.random.default_rng(seed)
        for name, err in _op_checks(rng):
            results.append((name, err, GRAD_TOL))
        results.append(("composite-model-loss", _composite_check(rng), COMPOSITE_TOL))
        results.append(("conv-adjoint-identity", _adjoint_check(rng), ADJOINT_TOL))
        return results


def _op_checks(rng) -> list[tuple[str, float]]:
    out = []
    unary = {
        "exp": ad.exp, "log": ad.log, "tanh": ad.tanh, "sigmoid": ad.sigmoid,
        "relu": ad.relu, "leaky-relu": ad.leaky_relu, "square": ad.square,
    }
    for name, fn in unary.items():
        worst = 0.0
        for _ in range(20):
            shape = tuple(rng.integers(2, 5, size=2))
            low = 0.3 if name == "log" else 0.2
            signs = 1.0 if name == "log" else rng.choice([-1.0, 1.0], shape)
            p = ad.Parameter(rng.uniform(low, 1.5, shape) * signs, "p")
            worst = max(worst, ad.gradient_check(
                lambda: ad.tensor_sum(ad.square(fn(p))), [p], rng=rng))
        out.append((name, worst))

    binary = {"add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div}
    for name, fn in binary.items():
        worst = 0.0
        for _ in range(20):
            shape = tuple(rng.integers(2, 5, size=2))
            # keep magnitudes bounded away from zero: a vanishing analytic
            # gradient turns the relative error into pure difference noise
            a = ad.Parameter(rng.uniform(0.2, 1.5, shape) * rng.choice([-1.0, 1.0], shape), "a")
            b = ad.Parameter(rng.uniform(0.3, 1.5, shape), "b")
            worst = max(worst, ad.gradient_check(
                lambda: ad.tensor_sum(ad.square(fn(a, b))), [a, b], rng=rng))
        out.append((name, worst))

    worst = 0.0
    for _ in range(20):
        m, k, n = rng.integers(2, 5, size=3)
        a = ad.Parameter(rng.normal(size=(m, k)), "a")
        b = ad.Parameter(rng.normal(size=(k, n)), "b")
        worst = max(worst, ad.gradient_check(
            lambda: ad.tensor_sum(ad.square(ad.matmul(a, b))), [a, b], rng=rng))
    out.append(("matmul", worst))

    worst = 0.0
    for _ in range(20):
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        x = ad.Parameter(rng.normal(size=(2, 2, 6, 6)), "x")
        k = ad.Parameter(rng.normal(size=(3, 2, 3, 3)), "k")
        worst = max(worst, ad.gradient_check(
            lambda: ad.tensor_sum(ad.square(ad.conv2d(x, k, stride, pad))), [x, k], rng=rng))
    out.append(("conv2d", worst))

    worst = 0.0
    for _ in range(20):
        stride = int(rng.integers(1, 3))
        x = ad.Parameter(rng.normal(size=(2, 3, 4, 4)), "x")
        k = ad.Parameter(rng.normal(size=(3, 2, 4, 4)), "k")
        worst = max(worst, ad.gradient_check(
            lambda: ad.tensor_sum(ad.square(ad.conv2d_transpose(x, k, stride, 1))),
            [x, k], rng=rng))
    out.append(("conv2d-transpose", worst))

    worst = 0.0
    for _ in range(20):
        c = int(rng.integers(2, 4))
        x = ad.Parameter(rng.normal(size=(4, c, 3, 3)), "x")
        gamma = ad.Parameter(rng.uniform(0.5, 1.5, c), "gamma")
        beta = ad.Parameter(rng.normal(size=c), "beta")
        target = rng.normal(size=(4, c, 3, 3))

        def build():
            y = ad.batch_norm(x, gamma, beta, np.zeros(c), np.ones(c), "train")
            return ad.tensor_sum(ad.square(ad.sub(y, ad.Tensor(target))))

        worst = max(worst, ad.gradient_check(build, [x, gamma, beta], rng=rng))
    out.append(("batch-norm", worst))
    return out


def _composite_check(rng) -> float:
    """VAE parameters under the regularized loss; classifier parameters
    under their own training loss.

    The feature targets are gradient-blocked constants, so differences of
    the regularized loss w.r.t. classifier weights include target motion the
    objective deliberately does not differentiate; the classifier's live
    gradient is defined by the cross-entropy it is trained with.
    """
    # Model/data/noise seeds pinned to a combination verified exhaustively
    # (every coordinate, both losses); random coordinate subsampling still
    # varies. Piecewise-linear kinks make differences at arbitrary seeds
    # occasionally undefined, so the seeds are not drawn from ``rng``.
    arch = ArchConfig(image_shape=(1, 8, 8), latent_dim=3, base_filters=2,
                      stages=2, label_count=2, dense_units=4)
    bundle = init_bundle(arch, make_rng(5))
    x = ad.Tensor(np.random.default_rng(1).uniform(-1, 1, (3, 1, 8, 8)))
    cfg = TrainConfig(batch_size=3)

    def build_vae():
        return discriminative_loss(bundle, x, make_rng(7), cfg).loss

    err = ad.gradient_check(build_vae, bundle.vae_params(), num_coords=120, rng=rng)

    targets = np.random.default_rng(2).integers(0, 2, (3, arch.label_count)).astype(float)

    def build_clf():
        from .models import classify
        _, logits = classify(bundle, x, "train")
        return ad.sigmoid_cross_entropy(logits, targets)

    err_clf = ad.gradient_check(build_clf, bundle.classifier_params(),
                                num_coords=100, rng=rng)
    return max(err, err_clf)


def _adjoint_check(rng) -> float:
    worst = 0.0
    for _ in range(50):
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 3))
        khw = int(rng.integers(max(1, 2 * pad), 6))
        steps_h = int(rng.integers(1, 5))
        steps_w = int(rng.integers(1, 5))
        h = khw + stride * (steps_h - 1) - 2 * pad
        w = khw + stride * (steps_w - 1) - 2 * pad
        if h < 1 or w < 1:
            continue
        n, c, f = (int(rng.integers(1, 4)) for _ in range(3))
        x = rng.normal(size=(n, c, h, w))
        k = rng.normal(size=(f, c, khw, khw))
        y = ad.conv2d(ad.Tensor(x), ad.Tensor(k), stride, pad).data
        u = rng.normal(size=y.shape)
        ut = ad.conv2d_transpose(ad.Tensor(u), ad.Tensor(k), stride, pad).data
        lhs = float((y * u).sum())
        rhs = float((x * ut).sum())
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0))
    return worst
