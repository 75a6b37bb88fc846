"""Diagonal Gaussian: closed forms against Monte Carlo, quadrature, and
distributional checks on reparametrized samples."""

import math

import numpy as np
import pytest
from scipy import stats

import discgen as dg
from discgen import autodiff as ad
from discgen.gaussians import kl_to_standard_normal_array, log_density_array

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def gaussian(mean, log_var):
    return dg.DiagonalGaussian(ad.Tensor(np.asarray(mean, dtype=float)),
                               ad.Tensor(np.asarray(log_var, dtype=float)))


class TestReparameterize:
    def test_zero_noise_returns_mean(self, f64):
        q = gaussian([0.3, -0.7], [0.5, -1.0])
        z = dg.reparameterize(q, ad.Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(z.data, q.mean.data)

    def test_unit_noise_arithmetic(self, f64):
        # z = mu + sigma * eps with sigma inside the log-variance clamp
        q = gaussian([2.0], [2.0 * math.log(1.5)])
        z = dg.reparameterize(q, ad.Tensor([1.0]))
        np.testing.assert_allclose(z.data, [3.5], rtol=1e-12)

    def test_unit_noise_arithmetic_clamped_sigma(self, f64):
        # sigma = 3 exceeds the clamp (log 9 > 2), so it saturates at e.
        q = gaussian([2.0], [2.0 * math.log(3.0)])
        z = dg.reparameterize(q, ad.Tensor([1.0]))
        np.testing.assert_allclose(z.data, [2.0 + math.e], rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            dg.reparameterize(gaussian([0.0], [0.0]), ad.Tensor([0.0, 0.0]))

    def test_moments_match_target(self, f64):
        n = 10 ** 5
        rng = dg.make_rng(42)
        q = gaussian(np.ones(n), np.full(n, math.log(4.0)))
        z = dg.reparameterize(q, dg.sample_standard_normal(rng, (n,))).data
        assert abs(z.mean() - 1.0) <= 4.0 * (2.0 / math.sqrt(n))
        assert abs(z.var() - 4.0) <= 0.05 * 4.0

    def test_gradients_flow_to_mean_and_logvar_not_eps(self, f64):
        mean = ad.Parameter([0.5, -0.5], "mean")
        log_var = ad.Parameter([0.1, 0.2], "log_var")
        eps = ad.Tensor([0.3, -0.8])
        q = dg.DiagonalGaussian(mean, log_var)
        err = ad.gradient_check(
            lambda: ad.tensor_sum(ad.square(dg.reparameterize(q_build(mean, log_var), eps))),
            [mean, log_var])
        assert err <= 1e-6
        assert eps.grad is None

    def test_samples_have_target_distribution_ks(self, f64):
        # KS statistic over 1e4 one-dimensional draws below the 1%
        # significance threshold c(0.01)/sqrt(n), c(0.01) = 1.628.
        n = 10 ** 4
        rng = dg.make_rng(7)
        mu, sigma = 0.8, 1.7
        q = gaussian(np.full(n, mu), np.full(n, 2.0 * math.log(sigma)))
        z = dg.reparameterize(q, dg.sample_standard_normal(rng, (n,))).data
        statistic = stats.kstest(z, stats.norm(loc=mu, scale=sigma).cdf).statistic
        assert statistic < 1.628 / math.sqrt(n)


def q_build(mean, log_var):
    return dg.DiagonalGaussian(mean, log_var)


class TestKl:
    def test_standard_normal_gives_zero(self, f64):
        q = gaussian(np.zeros(5), np.zeros(5))
        assert abs(dg.kl_to_standard_normal(q).item()) <= 1e-12

    def test_unit_mean_shift(self, f64):
        assert dg.kl_to_standard_normal(gaussian([1.0], [0.0])).item() == pytest.approx(0.5, abs=1e-12)

    def test_variance_e(self, f64):
        expected = 0.5 * (math.e - 2.0)  # 0.35914...
        got = dg.kl_to_standard_normal(gaussian([0.0], [1.0])).item()
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.35914, abs=5e-6)

    def test_nonnegative_and_zero_only_at_standard(self, f64):
        rng = np.random.default_rng(0)
        for _ in range(50):
            d = int(rng.integers(1, 6))
            q = gaussian(rng.normal(size=d), rng.uniform(-2, 1.5, size=d))
            kl = dg.kl_to_standard_normal(q).item()
            assert kl >= 0.0
        assert dg.kl_to_standard_normal(gaussian(np.zeros(3), np.zeros(3))).item() <= 1e-9

    def test_matches_monte_carlo_log_ratio(self, f64):
        # closed form within 4 standard errors of E_q[log q - log p], 1e5 draws
        rng = np.random.default_rng(77)
        draws = 10 ** 5
        for _ in range(50):
            d = int(rng.integers(1, 4))
            mean = rng.normal(size=d)
            log_var = rng.uniform(-1.5, 1.0, size=d)
            closed = kl_to_standard_normal_array(mean, log_var)
            z = mean + np.exp(0.5 * log_var) * rng.standard_normal((draws, d))
            log_q = log_density_array(mean, log_var, z, sum_axes=(1,))
            log_p = log_density_array(np.zeros(d), np.zeros(d), z, sum_axes=(1,))
            ratio = log_q - log_p
            se = ratio.std(ddof=1) / math.sqrt(draws)
            assert abs(ratio.mean() - closed) <= 4.0 * se

    def test_gradient(self, f64):
        mean = ad.Parameter([0.4, -1.2], "mean")
        log_var = ad.Parameter([0.3, -0.6], "log_var")
        err = ad.gradient_check(
            lambda: dg.kl_to_standard_normal(dg.DiagonalGaussian(mean, log_var)),
            [mean, log_var])
        assert err <= 1e-6


class TestLogDensity:
    def test_at_mean_unit_variance(self, f64):
        for d in (1, 3, 10):
            p = gaussian(np.zeros(d), np.zeros(d))
            got = dg.log_density(p, ad.Tensor(np.zeros(d))).item()
            assert got == pytest.approx(-d * HALF_LOG_2PI, rel=1e-12)
            assert got == pytest.approx(-0.918939 * d, abs=2e-6 * d)

    def test_one_sigma_away(self, f64):
        got = dg.log_density(gaussian([0.0], [0.0]), ad.Tensor([1.0])).item()
        assert got == pytest.approx(-0.918939 - 0.5, abs=2e-6)

    def test_density_integrates_to_one(self, f64):
        # trapezoid quadrature over a wide grid
        mu, log_var = 0.4, math.log(0.6)
        xs = np.linspace(mu - 12.0, mu + 12.0, 20001)
        values = [math.exp(dg.log_density(gaussian([mu], [log_var]), ad.Tensor([x])).item())
                  for x in xs[:: 100]]
        per_point = np.exp(-HALF_LOG_2PI - 0.5 * log_var - (xs - mu) ** 2 / (2 * math.exp(log_var)))
        integral = np.trapezoid(per_point, xs)
        assert abs(integral - 1.0) <= 1e-3
        # spot-check the graph op agrees with the dense formula
        np.testing.assert_allclose(values, per_point[::100], rtol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            dg.log_density(gaussian([0.0], [0.0]), ad.Tensor([0.0, 1.0]))

    def test_gradient(self, f64):
        mean = ad.Parameter([0.4, -1.2], "mean")
        log_var = ad.Parameter([0.3, -0.6], "log_var")
        x = ad.Parameter([0.9, 0.1], "x")
        err = ad.gradient_check(
            lambda: dg.log_density(dg.DiagonalGaussian(mean, log_var), x),
            [mean, log_var, x])
        assert err <= 1e-6


class TestSampling:
    def test_fixed_seed_reproduces(self):
        a = dg.sample_standard_normal(dg.make_rng(5), (100,)).data
        b = dg.sample_standard_normal(dg.make_rng(5), (100,)).data
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = dg.sample_standard_normal(dg.make_rng(5, 0), (100,)).data
        b = dg.sample_standard_normal(dg.make_rng(5, 1), (100,)).data
        assert not np.array_equal(a, b)

    def test_mean_near_zero(self, f64):
        n = 10 ** 5
        z = dg.sample_standard_normal(dg.make_rng(3), (n,)).data
        assert abs(z.mean()) <= 4.0 / math.sqrt(n)

    def test_central_interval_mass(self, f64):
        n = 10 ** 5
        z = dg.sample_standard_normal(dg.make_rng(4), (n,)).data
        fraction = float(np.mean(np.abs(z) <= 1.0))
        assert abs(fraction - 0.6827) <= 0.01

    def test_logvar_clamped_at_construction(self, f64):
        q = gaussian([0.0], [9.0])
        assert float(q.log_var.data[0]) == 2.0
        q2 = gaussian([0.0], [-20.0])
        assert float(q2.log_var.data[0]) == -7.0
