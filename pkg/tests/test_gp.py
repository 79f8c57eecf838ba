import math

import numpy as np
import pytest

from gpsens.errors import FitError, NumericalError, ValidationError
from gpsens.gp import (
    Dataset,
    FittedGp,
    HyperPosterior,
    chol_with_jitter,
    fit_mmle,
    laplace_hyper_posterior,
    lml_value_and_grad,
    log_marginal_likelihood,
    posterior,
    posterior_quantile,
    sample_hyperparameters,
)
from gpsens.kernels import Matern52, SquaredExponential


def random_gp(rng, n, kernel=None, noise=0.1):
    X = np.sort(rng.uniform(-2.0, 2.0, n))[:, None]
    y = rng.normal(size=n)
    return FittedGp(Dataset(X, y), kernel or SquaredExponential(1.0, 0.7), noise)


class TestDataset:
    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            Dataset(np.zeros((3, 1)), np.zeros(2))

    def test_nonfinite(self):
        with pytest.raises(ValidationError):
            Dataset(np.array([[0.0], [np.inf]]), np.zeros(2))


class TestCholesky:
    def test_factor_reconstructs(self):
        rng = np.random.default_rng(0)
        gp = random_gp(rng, 10)
        K = gp.kernel.gram(gp.data.X) + gp.noise_variance * np.eye(10)
        rel = np.linalg.norm(gp.L @ gp.L.T - K) / np.linalg.norm(K)
        assert rel <= 1e-10
        assert gp.jitter == 0.0

    def test_jitter_fixes_rank_deficiency(self):
        # duplicated points with zero noise would not factor without jitter
        A = np.ones((4, 4))
        L, jitter = chol_with_jitter(A)
        assert jitter > 0.0
        np.testing.assert_allclose(L @ L.T, A + jitter * np.eye(4), rtol=1e-12)

    def test_jitter_ceiling(self):
        A = -np.eye(3)
        with pytest.raises(NumericalError):
            chol_with_jitter(A)


class TestPosterior:
    def test_one_point_closed_form(self):
        # k = 1 at zero distance, noise 1, y = 1: mean 0.5, var 0.5
        gp = FittedGp(Dataset([[0.0]], [1.0]), SquaredExponential(1.0, 1.0), 1.0)
        mean, std = posterior(gp, 0.0)
        assert mean == pytest.approx(0.5, rel=1e-12)
        assert std**2 == pytest.approx(0.5, rel=1e-12)

    def test_zero_outputs_zero_mean(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(size=(6, 1))
        gp = FittedGp(Dataset(X, np.zeros(6)), SquaredExponential(1.0, 1.0), 0.3)
        mean, _ = posterior(gp, 0.5)
        assert mean == 0.0

    def test_matches_dense_inverse(self):
        gp = FittedGp(Dataset([[0.0], [1.0]], [1.0, -1.0]), SquaredExponential(1.0, 1.0), 0.1)
        K = gp.kernel.gram(gp.data.X)
        A = K + 0.1 * np.eye(2)
        kstar = gp.kernel.gram(gp.data.X, [[0.3]])[:, 0]
        Ainv = np.linalg.inv(A)
        mean_o = kstar @ Ainv @ gp.data.y
        var_o = 1.0 - kstar @ Ainv @ kstar
        mean, std = posterior(gp, 0.3)
        assert mean == pytest.approx(mean_o, rel=1e-10)
        assert std**2 == pytest.approx(var_o, rel=1e-10)

    def test_variance_bounds_property(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            gp = random_gp(rng, rng.integers(2, 15))
            xs = rng.uniform(-3, 3)
            _, std = posterior(gp, xs)
            prior_var = gp.kernel.gram([[xs]])[0, 0]
            assert 0.0 <= std**2 <= prior_var + 1e-8

    def test_mean_const_offset(self):
        gp = FittedGp(Dataset([[0.0]], [2.0]), SquaredExponential(1.0, 1.0), 1.0,
                      mean_const=2.0)
        mean, _ = posterior(gp, 100.0)  # far away: reverts to the constant mean
        assert mean == pytest.approx(2.0, abs=1e-10)


class TestQuantile:
    def test_median_is_mean(self):
        rng = np.random.default_rng(3)
        gp = random_gp(rng, 5)
        mean, _ = posterior(gp, 0.2)
        assert posterior_quantile(gp, 0.2, 0.5) == pytest.approx(mean, rel=1e-12)

    def test_95th_standard_normal_constant(self):
        # mean 0, unit posterior sd at a far point with unit-amplitude kernel
        gp = FittedGp(Dataset([[0.0]], [0.0]), SquaredExponential(1.0, 1.0), 1.0)
        q = posterior_quantile(gp, 1e6, 0.95)
        assert q == pytest.approx(1.644854, abs=1e-6)  # table value of the normal quantile

    def test_include_noise_replaces_variance(self):
        rng = np.random.default_rng(4)
        gp = random_gp(rng, 6, noise=0.37)
        mean, std = posterior(gp, 0.1)
        q = posterior_quantile(gp, 0.1, 0.9, include_noise=True)
        z = (q - mean) / math.sqrt(std**2 + 0.37)
        q2 = posterior_quantile(gp, 0.1, 0.9, include_noise=False)
        z2 = (q2 - mean) / std
        assert z == pytest.approx(z2, rel=1e-12)

    @pytest.mark.parametrize("q", [0.0, 1.0, -0.5, 1.5])
    def test_quantile_domain(self, q):
        rng = np.random.default_rng(5)
        gp = random_gp(rng, 3)
        with pytest.raises(ValidationError):
            posterior_quantile(gp, 0.0, q)


class TestLogMarginalLikelihood:
    def test_scalar_closed_form(self):
        d = Dataset([[0.0]], [0.0])
        lml = log_marginal_likelihood(d, SquaredExponential(1.0, 1.0), 1.0)
        assert lml == pytest.approx(-0.5 * math.log(2.0) - 0.5 * math.log(2.0 * math.pi),
                                    rel=1e-12)

    def test_zero_residual_quadratic_term(self):
        d = Dataset([[0.0], [3.0]], [1.7, 1.7])
        lml = log_marginal_likelihood(d, SquaredExponential(1.0, 1.0), 0.5, mean_const=1.7)
        K = SquaredExponential(1.0, 1.0).gram(d.X) + 0.5 * np.eye(2)
        expect = -0.5 * np.linalg.slogdet(K)[1] - math.log(2.0 * math.pi)
        assert lml == pytest.approx(expect, rel=1e-12)

    def test_against_dense_determinant(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(size=(3, 1))
        y = rng.normal(size=3)
        k = Matern52(1.2, 0.6)
        lml = log_marginal_likelihood(Dataset(X, y), k, 0.2)
        A = k.gram(X) + 0.2 * np.eye(3)
        expect = (-0.5 * y @ np.linalg.solve(A, y)
                  - 0.5 * np.linalg.slogdet(A)[1]
                  - 1.5 * math.log(2.0 * math.pi))
        assert lml == pytest.approx(expect, rel=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = rng.integers(3, 9)
            X = rng.uniform(size=(n, 1))
            y = rng.normal(size=n)
            d = Dataset(X, y)
            k = SquaredExponential(float(rng.uniform(0.5, 2)), float(rng.uniform(0.3, 1.5)))
            nv = float(rng.uniform(0.05, 0.5))
            names = [p for p, _ in k.param_items()] + ["noise_variance"]
            _, grad = lml_value_and_grad(d, k, nv, 0.0, names)
            values = np.array([v for _, v in k.param_items()] + [nv])
            h = 1e-6
            for i, name in enumerate(names):
                def at(t):
                    logs = np.log(values.copy())
                    logs[i] += t
                    vals = np.exp(logs)
                    kk = k.with_params(dict(zip(names[:-1], vals[:-1])))
                    return log_marginal_likelihood(d, kk, vals[-1])
                fd = (at(h) - at(-h)) / (2.0 * h)
                assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)


class TestFitMmle:
    def test_stationary_point_returned_unchanged(self):
        rng = np.random.default_rng(8)
        data = Dataset(np.sort(rng.uniform(0, 4, 40))[:, None], rng.normal(size=40))
        rough = fit_mmle(data, SquaredExponential(1.0, 1.0), 0.5, restarts=3, seed=0)
        assert rough.grad_norm < 1e-4
        again = fit_mmle(data, rough.kernel, rough.noise_variance, restarts=1, seed=0)
        for (_, a), (_, b) in zip(again.kernel.param_items(), rough.kernel.param_items()):
            assert a == pytest.approx(b, rel=1e-3)

    def test_recovers_lengthscale_from_simulation(self):
        rng = np.random.default_rng(9)
        n = 200
        X = np.sort(rng.uniform(0, 10, n))[:, None]
        true = SquaredExponential(1.0, 0.5)
        K = true.gram(X) + 1e-10 * np.eye(n)
        y = np.linalg.cholesky(K) @ rng.standard_normal(n) + rng.normal(0, 0.1, n)
        gp = fit_mmle(Dataset(X, y), SquaredExponential(1.0, 1.0), 0.05, restarts=3, seed=1)
        lam = dict(gp.kernel.param_items())["se.lengthscale"]
        assert abs(lam - 0.5) / 0.5 < 0.2

    def test_fixed_parameters_stay_fixed(self):
        rng = np.random.default_rng(10)
        data = Dataset(rng.uniform(size=(20, 1)), rng.normal(size=20))
        gp = fit_mmle(data, SquaredExponential(1.0, 1.0), 0.2, restarts=2, seed=0,
                      fixed=("se.amplitude",))
        assert dict(gp.kernel.param_items())["se.amplitude"] == 1.0
        assert gp.fixed_params == ("se.amplitude",)

    def test_unknown_fixed_rejected(self):
        rng = np.random.default_rng(11)
        data = Dataset(rng.uniform(size=(5, 1)), rng.normal(size=5))
        with pytest.raises(ValidationError):
            fit_mmle(data, SquaredExponential(1.0, 1.0), 0.2, fixed=("se.nope",))

    def test_monotone_objective_over_iterations(self):
        # L-BFGS-B line search only accepts decreases of the negative evidence
        from scipy import optimize as sopt

        rng = np.random.default_rng(12)
        data = Dataset(np.sort(rng.uniform(0, 4, 30))[:, None], rng.normal(size=30))
        k = SquaredExponential(1.0, 1.0)
        names = [p for p, _ in k.param_items()] + ["noise_variance"]

        values = []

        def obj(x):
            vals = np.exp(x)
            kk = k.with_params(dict(zip(names[:-1], vals[:-1])))
            v, grad = lml_value_and_grad(data, kk, vals[-1], 0.0, names)
            return -v, -grad

        def cb(xk):
            values.append(obj(xk)[0])

        sopt.minimize(obj, np.zeros(3), jac=True, method="L-BFGS-B", callback=cb)
        diffs = np.diff(np.array(values))
        assert np.all(diffs <= 1e-9)


class TestLaplace:
    def test_quadratic_oracle(self):
        rng = np.random.default_rng(13)
        data = Dataset(rng.uniform(size=(8, 1)), rng.normal(size=8))
        gp = FittedGp(data, SquaredExponential(1.0, 1.0), 0.3)
        A = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 4.0]])
        theta_hat = np.log(gp.param_values())

        def quad(x):
            d = x - theta_hat
            return -0.5 * d @ A @ d

        hp = laplace_hyper_posterior(gp, objective=quad)
        np.testing.assert_allclose(hp.cov, np.linalg.inv(A), atol=1e-4)
        assert not hp.floored

    def test_single_parameter_positive(self):
        rng = np.random.default_rng(14)
        data = Dataset(np.sort(rng.uniform(0, 3, 25))[:, None], rng.normal(size=25))
        gp = fit_mmle(data, SquaredExponential(1.0, 1.0), 0.3, restarts=2, seed=0,
                      fixed=("se.amplitude", "se.lengthscale"))
        hp = laplace_hyper_posterior(gp)
        assert hp.cov.shape == (1, 1)
        assert hp.cov[0, 0] > 0.0

    def test_indefinite_hessian_floored_with_warning(self):
        rng = np.random.default_rng(15)
        data = Dataset(rng.uniform(size=(5, 1)), rng.normal(size=5))
        gp = FittedGp(data, SquaredExponential(1.0, 1.0), 0.3)
        theta_hat = np.log(gp.param_values())

        def saddle(x):
            d = x - theta_hat
            return -0.5 * (d[0] ** 2 - d[1] ** 2 + 2.0 * d[2] ** 2)

        hp = laplace_hyper_posterior(gp, objective=saddle)
        assert hp.floored
        assert hp.warning is not None
        assert np.all(np.linalg.eigvalsh(hp.cov) > 0.0)


class TestSampling:
    def make_hp(self, cov, names=("a", "b")):
        return HyperPosterior(tuple(names), np.zeros(len(names)), np.asarray(cov, dtype=float))

    def test_degenerate_covariance(self):
        hp = self.make_hp(1e-16 * np.eye(2))
        draws = sample_hyperparameters(hp, 50, seed=0)
        np.testing.assert_allclose(draws, 1.0, rtol=1e-6)

    def test_monte_carlo_mean(self):
        hp = self.make_hp(np.eye(3), names=("a", "b", "c"))
        draws = sample_hyperparameters(hp, 10_000, seed=1)
        assert np.max(np.abs(np.log(draws).mean(axis=0))) < 0.05

    def test_deterministic(self):
        hp = self.make_hp([[0.5, 0.1], [0.1, 0.3]])
        a = sample_hyperparameters(hp, 7, seed=42)
        b = sample_hyperparameters(hp, 7, seed=42)
        np.testing.assert_array_equal(a, b)

    def test_positive_domain(self):
        hp = self.make_hp(4.0 * np.eye(2))
        assert np.all(sample_hyperparameters(hp, 100, seed=2) > 0.0)

    def test_r_validation(self):
        with pytest.raises(ValidationError):
            sample_hyperparameters(self.make_hp(np.eye(2)), 0)
