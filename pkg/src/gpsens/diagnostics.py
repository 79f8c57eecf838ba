"""Qualitative-interchangeability diagnostics.

Two assessments back the final human judgment: noise-matched draws from
the zero-mean priors of two kernels (identical standard-normal inputs, so
visual differences come from the kernels alone), and a calibration of the
Gram-matrix change against hyperparameter-posterior variability via the
relative Frobenius norm.  The Gram comparison also produces the
mechanical verdict used by the workflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, UnsupportedError, ValidationError
from .gp import FittedGp, HyperPosterior, chol_with_jitter, sample_hyperparameters
from .kernels import as_points

__all__ = [
    "NoiseMatchedDraws",
    "FrobeniusComparison",
    "noise_matched_draws",
    "relative_frobenius",
    "frobenius_histogram",
    "draw_report",
    "parse_draw_report",
    "histogram_report",
]


@dataclass(frozen=True, eq=False)
class NoiseMatchedDraws:
    """Prior draws L z for several kernels sharing one standard-normal z.

    ``band_lower``/``band_upper`` is the 99.7% pointwise interval
    (+-3 sqrt(diag)) of the first kernel's prior.
    """

    points: np.ndarray            # (N, D)
    labels: tuple                 # one per kernel
    draws: tuple                  # of (N, n_draws) arrays, same order
    z: np.ndarray                 # (N, n_draws)
    band_lower: np.ndarray        # (N,)
    band_upper: np.ndarray        # (N,)


def noise_matched_draws(kernels, points, n_draws: int, seed=0, labels=None) -> NoiseMatchedDraws:
    """Draw from GP(0, k) for each kernel with one shared z ~ N(0, I).

    ``seed`` may be an integer or a Generator-like object exposing
    ``standard_normal``; the latter lets tests inject a recording RNG.
    """
    kernels = list(kernels)
    if not kernels:
        raise ValidationError("need at least one kernel")
    if n_draws < 1:
        raise ValidationError("n_draws must be >= 1")
    P = as_points(points)
    if labels is None:
        labels = tuple(f"kernel{i}" for i in range(len(kernels)))
    else:
        labels = tuple(labels)
        if len(labels) != len(kernels):
            raise ValidationError("need one label per kernel")

    rng = seed if hasattr(seed, "standard_normal") else np.random.default_rng([seed, 13])
    z = np.asarray(rng.standard_normal((P.shape[0], n_draws)), dtype=float)

    draws = []
    band = None
    for label, k in zip(labels, kernels):
        K = k.gram(P)
        try:
            L, _ = chol_with_jitter(K)
        except NumericalError as e:
            raise NumericalError(f"prior covariance of {label!r} is not factorizable: {e}") from None
        draws.append(L @ z)
        if band is None:
            half = 3.0 * np.sqrt(np.maximum(np.diag(K), 0.0))
            band = (-half, half)
    return NoiseMatchedDraws(P, labels, tuple(draws), z, band[0], band[1])


def relative_frobenius(A: np.ndarray, B: np.ndarray) -> float:
    """||A - B||_F / ||B||_F."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValidationError(f"matrix shapes differ: {A.shape} vs {B.shape}")
    ref = float(np.linalg.norm(B))
    if ref <= 0.0:
        raise ValidationError("reference matrix has zero Frobenius norm")
    return float(np.linalg.norm(A - B)) / ref


@dataclass(frozen=True, eq=False)
class FrobeniusComparison:
    """Candidate Gram distance calibrated against hyperparameter-posterior samples."""

    reference_norm: float
    candidate: float
    samples: np.ndarray        # (R,) relative Frobenius statistics
    interchangeable: bool
    rule: str                  # "max" or "quantile"
    rule_q: float | None = None

    @property
    def verdict(self) -> str:
        return "interchangeable" if self.interchangeable else "not interchangeable"


def frobenius_histogram(
    gp0: FittedGp,
    k1,
    hp: HyperPosterior,
    R: int = 500,
    seed: int = 0,
    rule: str = "max",
    rule_q: float = 0.95,
) -> FrobeniusComparison:
    """Compare k1's Gram change against R hyperparameter-posterior resamples.

    Each sample keeps the functional form of the original kernel with
    hyperparameters drawn from the Laplace posterior.  Under the default
    rule the kernels are declared not interchangeable exactly when the
    candidate statistic exceeds every sample statistic; the quantile rule
    compares against the empirical ``rule_q`` quantile instead.
    """
    if rule not in ("max", "quantile"):
        raise ValidationError(f"unknown verdict rule {rule!r}")
    if rule == "quantile" and not (0.0 < rule_q < 1.0):
        raise ValidationError("quantile rule needs 0 < q < 1")
    X = gp0.data.X
    K0 = gp0.kernel.gram(X)
    reference = float(np.linalg.norm(K0))

    draws = sample_hyperparameters(hp, R, seed)
    kernel_names = [n for n in hp.param_names if n != "noise_variance"]
    kernel_cols = [i for i, n in enumerate(hp.param_names) if n != "noise_variance"]
    stats = np.empty(R)
    for r in range(R):
        params = {n: draws[r, c] for n, c in zip(kernel_names, kernel_cols)}
        stats[r] = relative_frobenius(gp0.kernel.with_params(params).gram(X), K0)

    candidate = relative_frobenius(k1.gram(X), K0)
    cutoff = float(np.max(stats)) if rule == "max" else float(np.quantile(stats, rule_q))
    return FrobeniusComparison(
        reference_norm=reference,
        candidate=candidate,
        samples=stats,
        interchangeable=not candidate > cutoff,
        rule=rule,
        rule_q=rule_q if rule == "quantile" else None,
    )


# ----------------------------------------------------------------------
# plot-data artifacts
# ----------------------------------------------------------------------
# Delimited text, one header row, stable column order:
#   point <TAB> index <TAB> value <TAB> series
# Draw rows use the draw index; band rows use index 0; histogram rows
# leave the point column empty.  All floats carry 17 significant digits.

_HEADER = "point\tindex\tvalue\tseries"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def draw_report(draws: NoiseMatchedDraws) -> str:
    """Serialize noise-matched draws plus the reference band for plotting."""
    if draws.points.shape[1] != 1:
        raise UnsupportedError("draw plots support one-dimensional inputs only")
    pts = draws.points[:, 0]
    lines = [_HEADER]
    for label, D in zip(draws.labels, draws.draws):
        for j in range(D.shape[1]):
            for i in range(pts.size):
                lines.append(f"{_fmt(pts[i])}\t{j}\t{_fmt(D[i, j])}\t{label}")
    for tag, band in (("band_lower", draws.band_lower), ("band_upper", draws.band_upper)):
        for i in range(pts.size):
            lines.append(f"{_fmt(pts[i])}\t0\t{_fmt(band[i])}\t{tag}")
    return "\n".join(lines) + "\n"


def parse_draw_report(text: str) -> dict:
    """Parse the output of :func:`draw_report`.

    Returns {"points": (N,), "series": {label: (N, n_draws)},
    "band_lower": (N,), "band_upper": (N,)}.
    """
    lines = text.strip().split("\n")
    if not lines or lines[0] != _HEADER:
        raise ValidationError("not a draw report: bad header row")
    rows = []
    for ln in lines[1:]:
        point, index, value, series = ln.split("\t")
        rows.append((float(point), int(index), float(value), series))
    points: list[float] = []
    for p, _, _, s in rows:
        if s == "band_lower":
            points.append(p)
    series: dict = {}
    for p, j, v, s in rows:
        series.setdefault(s, {}).setdefault(j, []).append(v)
    out = {"points": np.array(points), "series": {}}
    for s, by_draw in series.items():
        mat = np.array([by_draw[j] for j in sorted(by_draw)]).T
        if s == "band_lower":
            out["band_lower"] = mat[:, 0]
        elif s == "band_upper":
            out["band_upper"] = mat[:, 0]
        else:
            out["series"][s] = mat
    return out


def histogram_report(comparison: FrobeniusComparison) -> str:
    """Serialize the Frobenius histogram samples and the candidate marker."""
    lines = [_HEADER]
    for r, v in enumerate(comparison.samples):
        lines.append(f"\t{r}\t{_fmt(v)}\thyper_sample")
    lines.append(f"\t0\t{_fmt(comparison.candidate)}\tcandidate")
    return "\n".join(lines) + "\n"
