"""Stationary-kernel perturbations through discretized spectral densities.

A stationary kernel on the line is represented by its one-sided spectral
density sampled on a frequency grid, k(tau) = int_0^inf cos(2 pi tau w)
S(w) dw, recovered by the trapezoidal rule.  The density values are the
finite-dimensional search space: a posterior functional is maximized over
a pointwise band around the original density by projected gradient ascent
with analytic gradients.

Convention: the grid stores the one-sided density (twice the symmetric
two-sided transform), so the exact closed forms below carry a factor 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NumericalError, UnsupportedError, ValidationError
from .functionals import FunctionalSpec
from .gp import FittedGp, chol_with_jitter, posterior_adjoints
from .kernels import (
    Kernel,
    Matern52,
    Spectral,
    SquaredExponential,
    Sum,
    trapezoid_weights,
)

__all__ = [
    "SpectralGrid",
    "SpectralBox",
    "density_of_kernel",
    "kernel_from_density",
    "default_grid",
    "functional_gradient",
    "maximize_spectral",
    "SpectralPosterior",
]


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    """One-sided spectral density sampled on strictly increasing frequencies."""

    omegas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        omegas = np.array(self.omegas, dtype=float)
        values = np.array(self.values, dtype=float)
        if omegas.ndim != 1 or values.shape != omegas.shape:
            raise ValidationError("grid frequencies and values must be matching 1-d arrays")
        if omegas.size < 2:
            raise ValidationError("spectral grid needs at least two frequencies")
        if omegas[0] != 0.0:
            raise ValidationError("spectral grid must start at frequency 0")
        if not np.all(np.diff(omegas) > 0.0):
            raise ValidationError("frequencies must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ValidationError("density values must be finite and nonnegative")
        omegas.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.omegas.size

    def to_kernel(self) -> Spectral:
        return Spectral(self.omegas, self.values)


@dataclass(frozen=True, eq=False)
class SpectralBox:
    """Pointwise band max(0, (1-eps) S0) <= S <= (1+eps) S0 around a reference density."""

    base: SpectralGrid
    epsilon: float

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon!r}")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        S0 = self.base.values
        return np.maximum(0.0, (1.0 - self.epsilon) * S0), (1.0 + self.epsilon) * S0

    def clip(self, values: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds()
        return np.clip(values, lo, hi)

    def contains(self, values: np.ndarray, atol: float = 0.0) -> bool:
        lo, hi = self.bounds()
        return bool(np.all(values >= lo - atol) and np.all(values <= hi + atol))


# ----------------------------------------------------------------------
# densities of kernels
# ----------------------------------------------------------------------
def _closed_form_density(k: Kernel, omegas: np.ndarray):
    """Exact one-sided density, or None when no closed form applies."""
    if isinstance(k, SquaredExponential):
        lam = k.lengthscale
        return (
            2.0 * k.amplitude**2 * lam * math.sqrt(2.0 * math.pi)
            * np.exp(-2.0 * math.pi**2 * lam**2 * omegas**2)
        )
    if isinstance(k, Matern52):
        lam = k.lengthscale
        pref = 2.0 * k.amplitude**2 * (16.0 / 3.0) * 5.0**2.5 / lam**5
        return pref * (5.0 / lam**2 + 4.0 * math.pi**2 * omegas**2) ** (-3.0)
    if isinstance(k, Sum):
        parts = [_closed_form_density(c, omegas) for c in k.children]
        if any(p is None for p in parts):
            return None
        return np.sum(parts, axis=0)
    return None


_DECAY_RTOL = 1e-12
_TAU_CAP = 1e7
_MAX_QUAD_POINTS = 1 << 21


def _numeric_density(k: Kernel, omegas: np.ndarray) -> np.ndarray:
    """One-sided cosine transform of k(tau) by trapezoidal quadrature."""
    def k_of_tau(taus):
        return k.gram(np.zeros((1, 1)), taus[:, None])[0]

    k0 = float(k_of_tau(np.array([0.0]))[0])
    if k0 <= 0.0:
        raise ValidationError("kernel variance must be positive")

    tau_max = 1.0
    while True:
        probe = np.linspace(0.5 * tau_max, tau_max, 64)
        if np.max(np.abs(k_of_tau(probe))) <= _DECAY_RTOL * k0:
            break
        tau_max *= 2.0
        if tau_max > _TAU_CAP:
            raise NumericalError(
                "kernel autocovariance does not decay fast enough for a numeric "
                "spectral transform; use a closed-form kernel or supply the density"
            )

    omega_max = float(np.max(omegas))
    n = int(min(_MAX_QUAD_POINTS, max(4096, math.ceil(32.0 * tau_max * max(omega_max, 1.0)))))
    if 32.0 * tau_max * max(omega_max, 1.0) > _MAX_QUAD_POINTS:
        raise NumericalError(
            "numeric spectral transform would need too fine a quadrature grid; "
            "the kernel decays too slowly for the requested frequencies"
        )
    taus = np.linspace(0.0, tau_max, n)
    kvals = k_of_tau(taus)
    out = np.empty(omegas.shape)
    for i, w in enumerate(omegas):
        out[i] = 4.0 * np.trapezoid(np.cos(2.0 * math.pi * w * taus) * kvals, taus)
    return out


def _density_values(k: Kernel, omegas: np.ndarray) -> np.ndarray:
    if not k.stationary:
        raise ValidationError("spectral densities are defined for stationary kernels only")
    vals = _closed_form_density(k, omegas)
    if vals is None:
        vals = _numeric_density(k, omegas)
    return np.maximum(vals, 0.0)


def density_of_kernel(k: Kernel, omegas) -> SpectralGrid:
    """One-sided spectral density of a stationary kernel on a frequency grid.

    Squared-exponential and Matern 5/2 nodes (and sums of them) use exact
    transforms; anything else falls back to numeric cosine quadrature of
    the autocovariance.  Values are floored at zero.
    """
    omegas = np.asarray(omegas, dtype=float)
    return SpectralGrid(omegas, _density_values(k, omegas))


def kernel_from_density(grid: SpectralGrid) -> Spectral:
    """Kernel node evaluating the trapezoidal cosine reconstruction of the grid."""
    return grid.to_kernel()


_TAIL_RATIO = 1e-15


def default_grid(k0: Kernel, G: int = 100, omega_max: float | None = None,
                 tail_ratio: float = _TAIL_RATIO) -> np.ndarray:
    """Uniform frequency grid from 0 to the density's tail cutoff.

    The upper frequency is located by bisection as the point where the
    density of ``k0`` falls to ``tail_ratio`` times its maximum (the
    cutoff is relative so the rule is invariant to amplitude rescaling).
    ``omega_max`` overrides the rule.
    """
    if G < 2:
        raise ValidationError("grid needs at least two frequencies")
    if omega_max is not None:
        if not omega_max > 0.0:
            raise ValidationError("omega_max must be positive")
        return np.linspace(0.0, float(omega_max), G)

    def density(ws):
        return _density_values(k0, np.atleast_1d(np.asarray(ws, dtype=float)))

    hi = 1.0
    smax = float(np.max(density(np.linspace(0.0, hi, 256))))
    for _ in range(60):
        scan = density(np.linspace(0.0, hi, 256))
        smax = max(smax, float(np.max(scan)))
        if scan[-1] <= tail_ratio * smax:
            break
        hi *= 2.0
    else:
        raise ValidationError(
            "could not locate the spectral tail automatically; set omega_max manually"
        )
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(density(mid)[0]) <= tail_ratio * smax:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-6 * hi:
            break
    return np.linspace(0.0, hi, G)


# ----------------------------------------------------------------------
# posterior functional over density values
# ----------------------------------------------------------------------
class SpectralPosterior:
    """Posterior functional of a GP whose kernel is a density on a fixed grid.

    Precomputes the cosine design matrices linking density values to the
    train/train and test/train Gram entries, so each evaluation costs one
    small matrix product and one Cholesky factorization.
    """

    _CACHE_LIMIT = 20_000_000  # floats; ~160 MB

    def __init__(self, gp: FittedGp, functional: FunctionalSpec, omegas):
        if gp.data.dim != 1:
            raise UnsupportedError("spectral perturbations support 1-d inputs only")
        self.functional = functional
        self.noise_variance = gp.noise_variance
        self.mean_const = gp.mean_const
        self.resid = gp.data.y - gp.mean_const
        self.omegas = np.asarray(omegas, dtype=float)
        self.weights = trapezoid_weights(self.omegas)
        x = gp.data.X[:, 0]
        xs = float(functional.point[0])
        self.n = x.size
        tau_xx = np.abs(x[:, None] - x[None, :]).reshape(-1)
        tau_sx = np.abs(x - xs)
        if tau_xx.size * self.omegas.size > self._CACHE_LIMIT:
            raise UnsupportedError(
                "training set too large for the cached spectral design matrices"
            )
        # (N^2, G) and (N, G) cosine design matrices
        self.C_xx = np.cos(2.0 * math.pi * tau_xx[:, None] * self.omegas[None, :])
        self.C_sx = np.cos(2.0 * math.pi * tau_sx[:, None] * self.omegas[None, :])

    def _solve(self, values):
        ws = self.weights * values
        K = (self.C_xx @ ws).reshape(self.n, self.n)
        A = K + self.noise_variance * np.eye(self.n)
        L, _ = chol_with_jitter(A)
        alpha = cho_solve((L, True), self.resid)
        kstar = self.C_sx @ ws
        kss = float(self.weights @ values)
        mu = self.mean_const + float(kstar @ alpha)
        v = solve_triangular(L, kstar, lower=True)
        var = max(kss - float(v @ v), 0.0)
        return L, alpha, kstar, mu, var

    def fstar(self, values) -> float:
        _, _, _, mu, var = self._solve(values)
        return self.functional.value(mu, var, self.noise_variance)

    def fstar_and_grad(self, values) -> tuple[float, np.ndarray]:
        L, alpha, kstar, mu, var = self._solve(values)
        f = self.functional.value(mu, var, self.noise_variance)
        dmu, dvar = self.functional.grads(mu, var, self.noise_variance)
        beta = cho_solve((L, True), kstar)
        bar_K, bar_kstar, bar_kss = posterior_adjoints(alpha, beta, dmu, dvar)
        grad = self.weights * (
            self.C_xx.T @ bar_K.reshape(-1) + self.C_sx.T @ bar_kstar + bar_kss
        )
        return f, grad


def functional_gradient(gp: FittedGp, functional: FunctionalSpec,
                        grid: SpectralGrid) -> np.ndarray:
    """Analytic gradient of the functional with respect to the density values."""
    problem = SpectralPosterior(gp, functional, grid.omegas)
    return problem.fstar_and_grad(grid.values)[1]


# ----------------------------------------------------------------------
# projected gradient ascent over the box
# ----------------------------------------------------------------------
_BACKOFFS = 20


def _ascend(problem: SpectralPosterior, box: SpectralBox, start: np.ndarray,
            steps: int, step_size: float | None):
    """Monotone projected ascent from one start; returns (S, f, iterations)."""
    S = box.clip(np.asarray(start, dtype=float))
    f, g = problem.fstar_and_grad(S)
    if not np.isfinite(f):
        raise NumericalError("non-finite functional value at the initial density")
    lo, hi = box.bounds()
    span = float(np.max(hi - lo))
    if step_size is None:
        lr0 = 0.1 * span / (float(np.max(np.abs(g))) + 1e-300)
    else:
        lr0 = float(step_size)
    lr = lr0
    accepted = 0
    for _ in range(steps):
        improved = False
        for _ in range(_BACKOFFS):
            cand = box.clip(S + lr * g)
            fc = problem.fstar(cand)
            if not np.isfinite(fc):
                raise NumericalError("non-finite functional value during ascent")
            if fc > f:
                S, f = cand, fc
                improved = True
                accepted += 1
                break
            lr *= 0.5
        if not improved:
            break
        lr = min(lr * 2.0, lr0)  # recover toward the base step after backoffs
        g = problem.fstar_and_grad(S)[1]
    return S, f, accepted


def maximize_spectral(
    gp0: FittedGp,
    functional: FunctionalSpec,
    box: SpectralBox,
    steps: int = 500,
    step_size: float | None = None,
    restarts: int = 25,
    seed: int = 0,
    warm_start: np.ndarray | None = None,
) -> tuple[SpectralGrid, float, dict]:
    """Maximize the functional over the density box by projected gradient ascent.

    Restart 0 starts at the reference density; the remaining restarts draw
    uniform starts inside the box; ``warm_start`` adds one extra start
    (used to thread solutions along an expanding-epsilon schedule).  The
    noise variance and any frozen functional baselines stay at the
    original fit throughout.  Returns (best density, best value, info)
    where info carries per-restart diagnostics.
    """
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    problem = SpectralPosterior(gp0, functional, box.base.omegas)
    lo, hi = box.bounds()

    starts: list[tuple[int, np.ndarray]] = []
    if warm_start is not None:
        starts.append((-1, np.asarray(warm_start, dtype=float)))
    starts.append((0, box.base.values.copy()))
    for r in range(1, restarts):
        rng = np.random.default_rng([seed, 7, r])
        starts.append((r, lo + rng.uniform(size=lo.shape) * (hi - lo)))

    best = None
    info = {"restarts": []}
    for index, start in starts:
        entry = {"index": index, "aborted": False, "fstar": None, "iterations": 0}
        try:
            S, f, iters = _ascend(problem, box, start, steps, step_size)
        except NumericalError as e:
            entry["aborted"] = True
            entry["message"] = str(e)
            info["restarts"].append(entry)
            continue
        entry["fstar"] = f
        entry["iterations"] = iters
        info["restarts"].append(entry)
        if best is None or f > best[1]:
            best = (S, f, index)
    if best is None:
        raise NumericalError("every ascent restart aborted with a non-finite functional")
    info["best_index"] = best[2]
    return SpectralGrid(box.base.omegas, best[0]), best[1], info
