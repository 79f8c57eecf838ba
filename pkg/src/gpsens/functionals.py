"""Scalar posterior functionals whose position against a threshold encodes a decision.

Three kinds are supported: the posterior mean at the test point, a
posterior quantile (latent or predictive), and the relative change of the
posterior mean against a frozen baseline measured in baseline posterior
standard deviations.  A functional can be negated to search the other
side of a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .gp import FittedGp, posterior
from .kernels import as_point

__all__ = ["FunctionalSpec", "evaluate_functional"]

_KINDS = ("posterior-mean", "posterior-quantile", "relative-change")

# guards the d(quantile)/d(variance) chain when the posterior variance underflows
_VAR_FLOOR = 1e-300


@dataclass(frozen=True)
class FunctionalSpec:
    """A scalar functional of the posterior predictive at a fixed test point.

    For the relative-change kind the baseline mean and standard deviation
    are frozen at construction and never recomputed under perturbed
    kernels.
    """

    kind: str
    xstar: tuple
    q: float | None = None
    include_noise: bool = False
    baseline_mean: float | None = None
    baseline_std: float | None = None
    negate: bool = False

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown functional kind {self.kind!r}")
        object.__setattr__(self, "xstar", tuple(float(v) for v in as_point(self.xstar)))
        if self.kind == "posterior-quantile":
            if self.q is None or not (0.0 < self.q < 1.0):
                raise ValidationError(f"quantile level must lie in (0, 1), got {self.q!r}")
        if self.kind == "relative-change":
            if self.baseline_mean is None or self.baseline_std is None:
                raise ValidationError("relative-change functional needs frozen baselines")
            if not self.baseline_std > 0.0:
                raise ValidationError("baseline standard deviation must be positive")

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------
    @classmethod
    def posterior_mean(cls, xstar):
        return cls("posterior-mean", tuple(as_point(xstar)))

    @classmethod
    def posterior_quantile(cls, xstar, q, include_noise=False):
        return cls("posterior-quantile", tuple(as_point(xstar)), q=q,
                   include_noise=include_noise)

    @classmethod
    def relative_change(cls, gp0: FittedGp, xstar):
        """Freeze the baseline (mean, std) under the original kernel."""
        mu0, s0 = posterior(gp0, xstar)
        return cls("relative-change", tuple(as_point(xstar)),
                   baseline_mean=mu0, baseline_std=s0)

    def negated(self):
        return replace(self, negate=not self.negate)

    @property
    def point(self) -> np.ndarray:
        return np.asarray(self.xstar, dtype=float)

    # ------------------------------------------------------------------
    # value and partials in terms of (posterior mean, posterior variance)
    # ------------------------------------------------------------------
    def value(self, mu: float, var: float, noise_variance: float) -> float:
        sign = -1.0 if self.negate else 1.0
        if self.kind == "posterior-mean":
            return sign * mu
        if self.kind == "posterior-quantile":
            s2 = var + noise_variance if self.include_noise else var
            return sign * (mu + float(norm.ppf(self.q)) * np.sqrt(max(s2, 0.0)))
        return sign * (self.baseline_mean - mu) / self.baseline_std

    def grads(self, mu: float, var: float, noise_variance: float) -> tuple[float, float]:
        """(dF/dmu, dF/dvar) at the given posterior moments."""
        sign = -1.0 if self.negate else 1.0
        if self.kind == "posterior-mean":
            return sign, 0.0
        if self.kind == "posterior-quantile":
            s2 = var + noise_variance if self.include_noise else var
            s = np.sqrt(max(s2, _VAR_FLOOR))
            return sign, sign * float(norm.ppf(self.q)) / (2.0 * s)
        return -sign / self.baseline_std, 0.0

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"kind": self.kind, "xstar": [float(v) for v in self.xstar]}
        if self.kind == "posterior-quantile":
            d["q"] = self.q
            d["include_noise"] = self.include_noise
        if self.kind == "relative-change":
            d["baseline_mean"] = self.baseline_mean
            d["baseline_std"] = self.baseline_std
        if self.negate:
            d["negate"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionalSpec":
        return cls(
            kind=d["kind"],
            xstar=tuple(d["xstar"]),
            q=d.get("q"),
            include_noise=bool(d.get("include_noise", False)),
            baseline_mean=d.get("baseline_mean"),
            baseline_std=d.get("baseline_std"),
            negate=bool(d.get("negate", False)),
        )


def evaluate_functional(gp: FittedGp, spec: FunctionalSpec) -> float:
    """Evaluate the functional on a fitted (or kernel-swapped) model."""
    mu, std = posterior(gp, spec.point)
    return spec.value(mu, std**2, gp.noise_variance)
