"""Exact Gaussian-process regression.

Posterior prediction, marginal likelihood with analytic gradients,
maximum-marginal-likelihood fitting with random restarts, and a Gaussian
(Laplace) approximation to the hyperparameter posterior.  Everything runs
in 64-bit precision and all linear algebra goes through one cached
Cholesky factor per fitted model; dense inverses never appear outside the
test oracles.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sopt
from scipy.linalg import cho_solve, solve_triangular
from scipy.stats import norm

from .errors import FitError, NumericalError, ValidationError
from .kernels import Kernel, as_point, as_points

__all__ = [
    "Dataset",
    "FittedGp",
    "HyperPosterior",
    "chol_with_jitter",
    "posterior",
    "posterior_quantile",
    "log_marginal_likelihood",
    "lml_value_and_grad",
    "fit_mmle",
    "laplace_hyper_posterior",
    "sample_hyperparameters",
    "posterior_adjoints",
]

# Jitter policy: start at 1e-8 * mean(diag), escalate by 10x up to 1e-2 * mean(diag).
JITTER_START = 1e-8
JITTER_MAX = 1e-2


@dataclass(frozen=True, eq=False)
class Dataset:
    """Training inputs X (N, D) and scalar outputs y (N,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = as_points(self.X)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValidationError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if X.shape[0] < 1:
            raise ValidationError("dataset must contain at least one observation")
        if not np.all(np.isfinite(y)):
            raise ValidationError("outputs contain non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def chol_with_jitter(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of A, adding diagonal jitter if needed.

    Returns (L, jitter).  Raises NumericalError once the jitter ceiling is
    exceeded.
    """
    scale = float(np.mean(np.diag(A)))
    if not np.isfinite(scale):
        raise NumericalError("covariance matrix contains non-finite entries")
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * scale
    ceiling = JITTER_MAX * scale
    eye = np.eye(A.shape[0])
    while jitter <= ceiling * (1.0 + 1e-12):
        try:
            return np.linalg.cholesky(A + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"Cholesky failed even with jitter {ceiling:.3e} (matrix scale {scale:.3e})"
    )


@dataclass(frozen=True, eq=False)
class FittedGp:
    """A GP regression model with fixed kernel, noise variance and constant mean.

    Construction factors K(X, X) + sigma^2 I once; the lower-triangular
    factor and the weight vector alpha = (K + sigma^2 I)^-1 (y - m) are
    cached for every later posterior evaluation.
    """

    data: Dataset
    kernel: Kernel
    noise_variance: float
    mean_const: float = 0.0
    grad_norm: float | None = None
    fixed_params: tuple = ()
    L: np.ndarray = field(init=False, repr=False)
    alpha: np.ndarray = field(init=False, repr=False)
    jitter: float = field(init=False)
    log_marginal: float = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.noise_variance) and self.noise_variance > 0.0):
            raise ValidationError(f"noise variance must be positive, got {self.noise_variance!r}")
        K = self.kernel.gram(self.data.X)
        A = K + self.noise_variance * np.eye(self.data.n)
        L, jitter = chol_with_jitter(A)
        resid = self.data.y - self.mean_const
        alpha = cho_solve((L, True), resid)
        lml = _lml_from_chol(L, resid, alpha)
        alpha.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "jitter", jitter)
        object.__setattr__(self, "log_marginal", lml)

    def with_kernel(self, kernel: Kernel) -> "FittedGp":
        """Same data, noise and mean under a different kernel (no refit)."""
        return dataclasses.replace(self, kernel=kernel, grad_norm=None)

    def param_names(self) -> list[str]:
        return [p for p, _ in self.kernel.param_items()] + ["noise_variance"]

    def param_values(self) -> np.ndarray:
        return np.array([v for _, v in self.kernel.param_items()] + [self.noise_variance])


def _lml_from_chol(L, resid, alpha) -> float:
    n = resid.shape[0]
    return float(
        -0.5 * resid @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2.0 * math.pi)
    )


def posterior(gp: FittedGp, xstar) -> tuple[float, float]:
    """Posterior mean and standard deviation of the latent f at a test point."""
    xs = as_point(xstar)
    kstar = gp.kernel.gram(gp.data.X, xs[None, :])[:, 0]
    kss = float(gp.kernel.gram(xs[None, :])[0, 0])
    mean = gp.mean_const + float(kstar @ gp.alpha)
    v = solve_triangular(gp.L, kstar, lower=True)
    var = max(kss - float(v @ v), 0.0)
    return mean, math.sqrt(var)


def posterior_quantile(gp: FittedGp, xstar, q: float, include_noise: bool = False) -> float:
    """q-quantile of the posterior at a test point.

    With ``include_noise`` the quantile refers to a new noisy observation
    rather than the latent function value.
    """
    if not (0.0 < q < 1.0):
        raise ValidationError(f"quantile level must lie strictly in (0, 1), got {q!r}")
    mean, std = posterior(gp, xstar)
    s = math.sqrt(std**2 + gp.noise_variance) if include_noise else std
    return mean + float(norm.ppf(q)) * s


def log_marginal_likelihood(
    dataset: Dataset, kernel: Kernel, noise_variance: float, mean_const: float = 0.0
) -> float:
    """Gaussian evidence log p(y | X, kernel, noise)."""
    if not noise_variance > 0.0:
        raise ValidationError("noise variance must be positive")
    K = kernel.gram(dataset.X)
    A = K + noise_variance * np.eye(dataset.n)
    L, _ = chol_with_jitter(A)
    resid = dataset.y - mean_const
    alpha = cho_solve((L, True), resid)
    return _lml_from_chol(L, resid, alpha)


def lml_value_and_grad(
    dataset: Dataset,
    kernel: Kernel,
    noise_variance: float,
    mean_const: float = 0.0,
    param_names=None,
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient in log-hyperparameter space.

    The gradient is ordered by ``param_names`` (kernel paths plus
    ``"noise_variance"``); defaults to all parameters.
    """
    K = kernel.gram(dataset.X)
    A = K + noise_variance * np.eye(dataset.n)
    L, _ = chol_with_jitter(A)
    resid = dataset.y - mean_const
    alpha = cho_solve((L, True), resid)
    value = _lml_from_chol(L, resid, alpha)

    if param_names is None:
        param_names = [p for p, _ in kernel.param_items()] + ["noise_variance"]
    Ainv = cho_solve((L, True), np.eye(dataset.n))
    dK = kernel.gram_param_grads(dataset.X)
    values = dict(kernel.param_items())
    values["noise_variance"] = noise_variance

    grad = np.empty(len(param_names))
    for i, name in enumerate(param_names):
        if name == "noise_variance":
            # dA/d(sigma^2) = I
            g = 0.5 * (alpha @ alpha - np.trace(Ainv))
        else:
            D = dK[name]
            g = 0.5 * (alpha @ (D @ alpha)) - 0.5 * float(np.sum(Ainv * D))
        grad[i] = g * values[name]  # chain rule onto log-parameters
    return value, grad


def _resolve_mean(mean, dataset: Dataset) -> float:
    if mean == "zero" or mean is None:
        return 0.0
    if mean == "train":
        return float(np.mean(dataset.y))
    return float(mean)


def fit_mmle(
    dataset: Dataset,
    kernel: Kernel,
    noise_variance: float = 1.0,
    restarts: int = 1,
    seed: int = 0,
    fixed=(),
    mean="zero",
    maxiter: int = 500,
) -> FittedGp:
    """Fit hyperparameters and noise variance by maximum marginal likelihood.

    Optimization runs in log-space with analytic gradients (L-BFGS-B,
    falling back to Nelder-Mead when the quasi-Newton run fails).  Restart
    0 starts at the supplied values; further restarts perturb the
    log-parameters by N(0, 0.5^2).  The best restart by achieved evidence
    wins, ties going to the lower restart index.

    ``fixed`` names hyperparameter paths excluded from optimization.
    """
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    mean_const = _resolve_mean(mean, dataset)
    all_names = [p for p, _ in kernel.param_items()] + ["noise_variance"]
    fixed = tuple(fixed)
    unknown = [f for f in fixed if f not in all_names]
    if unknown:
        raise ValidationError(f"fixed parameter(s) not present in kernel: {unknown}")
    free = [n for n in all_names if n not in fixed]
    if not free:
        raise ValidationError("no free hyperparameters to optimize")
    init = dict(kernel.param_items())
    init["noise_variance"] = float(noise_variance)
    if noise_variance <= 0.0:
        raise ValidationError("initial noise variance must be positive")
    x_init = np.log([init[n] for n in free])

    def rebuild(x_log):
        params = dict(zip(free, np.exp(x_log)))
        nv = params.pop("noise_variance", init["noise_variance"])
        return kernel.with_params(params), nv

    BAD = 1e25

    def objective(x_log):
        if not np.all(np.isfinite(x_log)) or np.any(np.abs(x_log) > 40.0):
            return BAD, np.zeros_like(x_log)
        k, nv = rebuild(x_log)
        try:
            value, grad = lml_value_and_grad(dataset, k, nv, mean_const, free)
        except NumericalError:
            return BAD, np.zeros_like(x_log)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            return BAD, np.zeros_like(x_log)
        return -value, -grad

    results = []
    diagnostics = []
    for r in range(restarts):
        if r == 0:
            x0 = x_init.copy()
        else:
            rng = np.random.default_rng([seed, 3, r])
            x0 = x_init + rng.normal(0.0, 0.5, size=x_init.shape)
        entry = {"restart": r, "ok": False, "lml": -np.inf, "message": ""}
        try:
            res = sopt.minimize(objective, x0, jac=True, method="L-BFGS-B",
                                options={"maxiter": maxiter})
            if np.isfinite(res.fun) and res.fun < BAD / 2:
                entry.update(ok=True, lml=-float(res.fun), x=res.x, message=str(res.message))
            else:
                # gradient-free fallback
                res = sopt.minimize(lambda x: objective(x)[0], x0, method="Nelder-Mead",
                                    options={"maxiter": 4 * maxiter, "fatol": 1e-10})
                if np.isfinite(res.fun) and res.fun < BAD / 2:
                    entry.update(ok=True, lml=-float(res.fun), x=res.x,
                                 message=f"nelder-mead fallback: {res.message}")
                else:
                    entry["message"] = f"no finite objective: {res.message}"
        except Exception as e:  # noqa: BLE001 - per-restart diagnostics, never fatal here
            entry["message"] = f"{type(e).__name__}: {e}"
        diagnostics.append(entry)
        if entry["ok"]:
            results.append(entry)

    if not results:
        raise FitError("all MMLE restarts failed", diagnostics)
    best = max(results, key=lambda e: (e["lml"], -e["restart"]))
    k_best, nv_best = rebuild(best["x"])
    _, grad = lml_value_and_grad(dataset, k_best, nv_best, mean_const, free)
    return FittedGp(
        data=dataset,
        kernel=k_best,
        noise_variance=nv_best,
        mean_const=mean_const,
        grad_norm=float(np.linalg.norm(grad)),
        fixed_params=fixed,
    )


@dataclass(frozen=True, eq=False)
class HyperPosterior:
    """Gaussian approximation to the log-hyperparameter posterior at the MMLE."""

    param_names: tuple
    mean_log: np.ndarray
    cov: np.ndarray
    floored: bool = False
    warning: str | None = None


def laplace_hyper_posterior(
    gp: FittedGp,
    objective=None,
    rel_step: float = 1e-4,
    floor_ratio: float = 1e-8,
) -> HyperPosterior:
    """Laplace approximation around the fitted log-hyperparameters.

    The Hessian of the log evidence is estimated by central finite
    differences; its negative is symmetrized and eigenvalue-floored at
    ``floor_ratio`` times the leading eigenvalue before inversion.  An
    indefinite Hessian is reported through the ``warning`` field rather
    than raised.

    ``objective`` may replace the log evidence with any callable of the
    log-parameter vector (used for testing and custom posteriors).
    """
    names = [n for n in gp.param_names() if n not in gp.fixed_params]
    values = dict(gp.kernel.param_items())
    values["noise_variance"] = gp.noise_variance
    theta = np.log([values[n] for n in names])

    if objective is None:
        def objective(x_log):
            params = dict(zip(names, np.exp(x_log)))
            nv = params.pop("noise_variance", gp.noise_variance)
            return log_marginal_likelihood(gp.data, gp.kernel.with_params(params), nv,
                                           gp.mean_const)

    p = theta.size
    steps = rel_step * np.maximum(1.0, np.abs(theta))
    H = np.empty((p, p))
    f0 = objective(theta)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = steps[i]
        H[i, i] = (objective(theta + ei) - 2.0 * f0 + objective(theta - ei)) / steps[i] ** 2
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (
                objective(theta + ei + ej)
                - objective(theta + ei - ej)
                - objective(theta - ei + ej)
                + objective(theta - ei - ej)
            ) / (4.0 * steps[i] * steps[j])

    negH = -0.5 * (H + H.T)
    eigvals, eigvecs = np.linalg.eigh(negH)
    top = float(eigvals.max())
    floor = floor_ratio * top if top > 0.0 else floor_ratio
    floored = bool(np.any(eigvals < floor))
    warning = None
    if floored:
        warning = (
            f"negative Hessian not positive definite (min eigenvalue {eigvals.min():.3e}); "
            f"eigenvalues floored at {floor:.3e}"
        )
    clipped = np.maximum(eigvals, floor)
    cov = (eigvecs / clipped) @ eigvecs.T
    cov = 0.5 * (cov + cov.T)
    return HyperPosterior(tuple(names), theta, cov, floored, warning)


def sample_hyperparameters(hp: HyperPosterior, R: int, seed: int = 0) -> np.ndarray:
    """R positive-domain draws from the Laplace posterior, one per row.

    Log-space draws are clipped to +-300 so a degenerate (near-flat)
    posterior cannot overflow the exponential; any realistic posterior is
    far inside that range.
    """
    if R < 1:
        raise ValidationError("R must be >= 1")
    L, _ = chol_with_jitter(hp.cov)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng([seed, 17])
    z = rng.standard_normal((hp.mean_log.size, R))
    return np.exp(np.clip(hp.mean_log[:, None] + L @ z, -300.0, 300.0)).T


def posterior_adjoints(alpha, beta, dmu, dvar):
    """Cotangents of (mean, variance) with respect to (K, k*, k**).

    ``alpha`` = (K + s2 I)^-1 (y - m), ``beta`` = (K + s2 I)^-1 k*.
    Returns (bar_K, bar_kstar, bar_kss) such that the directional
    derivative of the functional along (dK, dk*, dk**) equals
    sum(bar_K * dK) + bar_kstar . dk* + bar_kss * dk**.
    """
    bar_K = -dmu * np.outer(beta, alpha) + dvar * np.outer(beta, beta)
    bar_kstar = dmu * alpha - 2.0 * dvar * beta
    return bar_K, bar_kstar, dvar
