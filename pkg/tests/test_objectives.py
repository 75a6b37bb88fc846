"""Objective values against an independent evaluator, the lambda=0
reduction, gradient stopping, and Adam."""

import math

import numpy as np
import pytest

import discgen as dg
from discgen import autodiff as ad
from discgen import objectives
from discgen.optim import AdamState, adam_step

from straightline import straight_line_elbo

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def small_bundle(seed=1):
    arch = dg.ArchConfig(image_shape=(1, 8, 8), latent_dim=3, base_filters=2,
                         stages=2, label_count=2, dense_units=4)
    return dg.init_bundle(arch, dg.make_rng(seed))


class TestElbo:
    def test_zero_kl_when_posterior_standard(self, f64, monkeypatch):
        bundle = small_bundle()
        x = ad.Tensor(np.random.default_rng(0).uniform(-1, 1, (4, 1, 8, 8)))

        def fake_encode(b, xx, mode):
            shape = (xx.shape[0], b.arch.latent_dim)
            return dg.DiagonalGaussian(ad.Tensor(np.zeros(shape)), ad.Tensor(np.zeros(shape)))

        monkeypatch.setattr(objectives, "encode", fake_encode)
        breakdown = dg.elbo(bundle, x, dg.make_rng(1), dg.TrainConfig(batch_size=4))
        assert breakdown.l_z == pytest.approx(0.0, abs=1e-12)

    def test_single_example_batch_rejected(self, f64):
        bundle = small_bundle()
        x = ad.Tensor(np.zeros((1, 1, 8, 8)))
        with pytest.raises(ad.ShapeError):
            dg.elbo(bundle, x, dg.make_rng(1), dg.TrainConfig(batch_size=2))

    def test_matches_independent_straight_line_evaluator(self, f64):
        bundle = small_bundle(seed=3)
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, (3, 1, 8, 8))
        seed = 99
        breakdown = dg.elbo(bundle, ad.Tensor(x), dg.make_rng(seed),
                            dg.TrainConfig(batch_size=3))
        eps = dg.make_rng(seed).standard_normal((3, bundle.arch.latent_dim))
        l_z, l_x, total = straight_line_elbo(bundle, x, eps)
        assert breakdown.l_z == pytest.approx(l_z, rel=1e-5)
        assert breakdown.l_x == pytest.approx(l_x, rel=1e-5)
        assert breakdown.total == pytest.approx(total, rel=1e-5)

    def test_breakdown_composition(self, f64):
        bundle = small_bundle(seed=5)
        x = ad.Tensor(np.random.default_rng(6).uniform(-1, 1, (4, 1, 8, 8)))
        cfg = dg.TrainConfig(batch_size=4)
        b = dg.discriminative_loss(bundle, x, dg.make_rng(2), cfg)
        lambdas = dg.default_lambdas(bundle)
        recomposed = b.l_z + b.l_x + sum(l * d for l, d in zip(lambdas, b.l_d))
        assert b.total == pytest.approx(recomposed, abs=1e-6)
        assert float(b.loss.data) == pytest.approx(-b.total, abs=1e-9)


class TestDiscriminativeLoss:
    def test_lambda_zero_reduces_to_elbo(self, f64):
        bundle = small_bundle(seed=7)
        rng_data = np.random.default_rng(8)
        for seed in range(10):
            x = ad.Tensor(rng_data.uniform(-1, 1, (3, 1, 8, 8)))
            zeros = tuple(0.0 for _ in range(bundle.arch.num_feature_terms))
            a = dg.elbo(bundle, x, dg.make_rng(seed), dg.TrainConfig(batch_size=3))
            b = dg.discriminative_loss(bundle, x, dg.make_rng(seed),
                                       dg.TrainConfig(batch_size=3, lambdas=zeros))
            assert abs(a.l_z - b.l_z) <= 1e-6
            assert abs(a.l_x - b.l_x) <= 1e-6
            assert abs(a.total - b.total) <= 1e-6

    def test_wrong_lambda_length_rejected(self, f64):
        bundle = small_bundle(seed=9)
        x = ad.Tensor(np.zeros((2, 1, 8, 8)))
        with pytest.raises(ValueError):
            dg.discriminative_loss(bundle, x, dg.make_rng(0),
                                   dg.TrainConfig(batch_size=2, lambdas=(0.1,)))

    def test_perfect_autoencoder_hits_zero_residual_density(self, f64, monkeypatch):
        bundle = small_bundle(seed=11)
        x_data = np.random.default_rng(12).uniform(-1, 1, (3, 1, 8, 8))
        x = ad.Tensor(x_data)

        def perfect_decode(b, z, mode):
            return ad.Tensor(x_data.copy())

        monkeypatch.setattr(objectives, "decode", perfect_decode)
        b = dg.discriminative_loss(bundle, x, dg.make_rng(13), dg.TrainConfig(batch_size=3))
        dims = objectives.feature_dims(bundle)
        for dim, value in zip(dims, b.l_d):
            assert value == pytest.approx(-dim * HALF_LOG_2PI, rel=1e-12)

    def test_gradient_stop_keeps_encoder_at_elbo_gradients(self, f64):
        bundle = small_bundle(seed=15)
        x = ad.Tensor(np.random.default_rng(16).uniform(-1, 1, (3, 1, 8, 8)))
        enc_params = bundle.encoder.params()
        seed = 21

        ad.zero_grad(bundle.all_params())
        b_elbo = dg.elbo(bundle, x, dg.make_rng(seed), dg.TrainConfig(batch_size=3))
        ad.backward(b_elbo.loss)
        elbo_grads = [p.grad.copy() for p in enc_params]

        ad.zero_grad(bundle.all_params())
        cfg = dg.TrainConfig(batch_size=3, stop_encoder_gradient=True)
        b_disc = dg.discriminative_loss(bundle, x, dg.make_rng(seed), cfg)
        ad.backward(b_disc.loss)
        for g_ref, p in zip(elbo_grads, enc_params):
            np.testing.assert_allclose(p.grad, g_ref, atol=1e-6)

        # without the flag, feature terms do move encoder gradients
        ad.zero_grad(bundle.all_params())
        cfg2 = dg.TrainConfig(batch_size=3, stop_encoder_gradient=False)
        b2 = dg.discriminative_loss(bundle, x, dg.make_rng(seed), cfg2)
        ad.backward(b2.loss)
        deltas = [float(np.abs(p.grad - g).max()) for p, g in zip(enc_params, elbo_grads)]
        assert max(deltas) > 1e-8

    def test_classifier_parameters_never_accumulate(self, f64):
        bundle = small_bundle(seed=17)
        bundle.set_classifier_trainable(False)
        x = ad.Tensor(np.random.default_rng(18).uniform(-1, 1, (3, 1, 8, 8)))
        ad.zero_grad(bundle.all_params())
        b = dg.discriminative_loss(bundle, x, dg.make_rng(19), dg.TrainConfig(batch_size=3))
        ad.backward(b.loss)
        for p in bundle.classifier_params():
            assert not p.grad.any()


class TestAdam:
    def test_first_step_magnitude(self, f64):
        p = ad.Parameter([0.0], "p")
        p.grad[:] = 1.0
        state = AdamState()
        adam_step([p], state, lr=0.001)
        assert float(p.data[0]) == pytest.approx(-0.001, rel=1e-6)

    def test_zero_gradient_no_motion(self, f64):
        p = ad.Parameter([1.0, -2.0], "p")
        state = AdamState()
        adam_step([p], state, lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_zero_learning_rate_no_motion(self, f64):
        rng = np.random.default_rng(0)
        p = ad.Parameter(rng.normal(size=5), "p")
        before = p.data.copy()
        for _ in range(5):
            p.grad[:] = rng.normal(size=5)
            adam_step([p], AdamState(), lr=0.0)
        np.testing.assert_array_equal(p.data, before)

    def test_skips_non_trainable(self, f64):
        p = ad.Parameter([1.0], "p", trainable=False)
        p.grad[:] = 0.0
        adam_step([p], AdamState(), lr=0.5)
        np.testing.assert_array_equal(p.data, [1.0])

    def test_converges_on_quadratic(self, f64):
        p = ad.Parameter([1.0], "p")
        state = AdamState()
        for _ in range(200):
            ad.zero_grad([p])
            loss = ad.tensor_sum(ad.square(p))
            ad.backward(loss)
            adam_step([p], state, lr=0.05)
        assert abs(float(p.data[0])) < 0.5
