import numpy as np
import pytest

import discgen as dg
from discgen import autodiff as ad


@pytest.fixture
def f64():
    """Verification precision: finite differences need 64-bit."""
    with dg.precision("f64"):
        yield


@pytest.fixture
def tiny_arch():
    return dg.ArchConfig(image_shape=(1, 8, 8), latent_dim=4, base_filters=3,
                         stages=2, label_count=5, dense_units=6)


@pytest.fixture
def tiny_bundle(tiny_arch):
    return dg.init_bundle(tiny_arch, dg.make_rng(7))


def rand_tensor(rng, shape, requires_grad=False, lo=-1.0, hi=1.0):
    t = ad.Tensor(rng.uniform(lo, hi, shape))
    t.requires_grad = requires_grad
    return t


def rand_param(rng, shape, name="p", lo=-1.0, hi=1.0):
    return ad.Parameter(rng.uniform(lo, hi, shape), name)
