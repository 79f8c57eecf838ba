"""Expanding-neighborhood sensitivity workflow.

Walks an increasing epsilon schedule, re-solving the kernel perturbation
problem at each size until the optimized functional crosses the decision
threshold or the schedule runs out; runs the interchangeability
diagnostics on the resulting kernel either way; and assembles the
verdict:

* "non-robust" - the decision changed under a kernel the Gram-matrix
  comparison finds interchangeable with the original;
* "failed to find non-robustness" - the decision changed but only under a
  kernel flagged as not interchangeable;
* "decision not changed within schedule" - no schedule point moved the
  functional past the threshold.

The machine verdict uses the Gram-matrix rule; the noise-matched draw
artifact is always attached as evidence so the analyst can override the
interchangeability call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .diagnostics import (
    FrobeniusComparison,
    draw_report,
    frobenius_histogram,
    noise_matched_draws,
)
from .errors import ValidationError
from .functionals import FunctionalSpec, evaluate_functional
from .gp import FittedGp, laplace_hyper_posterior
from .kernels import kernel_from_dict, kernel_to_dict
from .spectral import SpectralBox, default_grid, density_of_kernel, maximize_spectral
from .warp import WarpObjectiveSpec, minimize_warp, warped_kernel

__all__ = [
    "SpectralEngineConfig",
    "WarpEngineConfig",
    "DiagnosticsConfig",
    "SensitivityReport",
    "run_workflow",
    "evaluate_functional",
    "assemble_verdict",
    "report_to_yaml",
    "report_from_yaml",
]

REPORT_SCHEMA = "gpsens-report/1"


@dataclass(frozen=True)
class SpectralEngineConfig:
    grid_size: int = 100
    omega_max: float | None = None
    steps: int = 500
    step_size: float | None = None
    restarts: int = 25

    def to_dict(self):
        return {
            "grid_size": self.grid_size,
            "omega_max": self.omega_max,
            "steps": self.steps,
            "step_size": self.step_size,
            "restarts": self.restarts,
        }


@dataclass(frozen=True)
class WarpEngineConfig:
    hidden_sizes: tuple = (50, 50)
    init_scale: float = 0.1
    steps: int = 300
    step_size: float | None = None
    restarts: int = 5
    regularizer_grid: object = None   # None -> training inputs plus the test point
    warp_paths: tuple | None = None   # None -> warp the whole kernel
    loss: object = "threshold-squared"

    def to_dict(self):
        return {
            "hidden_sizes": list(self.hidden_sizes),
            "init_scale": self.init_scale,
            "steps": self.steps,
            "step_size": self.step_size,
            "restarts": self.restarts,
            "warp_paths": list(self.warp_paths) if self.warp_paths else None,
        }


@dataclass(frozen=True)
class DiagnosticsConfig:
    n_samples: int = 500          # hyperparameter-posterior resamples
    rule: str = "max"
    rule_q: float = 0.95
    n_draws: int = 4
    draw_grid_size: int = 200

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "rule": self.rule,
            "rule_q": self.rule_q,
            "n_draws": self.n_draws,
            "draw_grid_size": self.draw_grid_size,
        }


@dataclass
class SensitivityReport:
    """Everything the analyst needs to render the final robustness call."""

    threshold: float
    functional: FunctionalSpec
    fstar_baseline: float
    engine: str
    schedule: list = field(default_factory=list)   # per-epsilon dicts
    crossed: bool = False
    crossing_epsilon: float | None = None
    kernel_k1: dict | None = None                  # serialized kernel tree
    fstar_k1: float | None = None
    frobenius: FrobeniusComparison | None = None
    draw_data: str | None = None                   # draw_report artifact text
    draw_file: str | None = None                   # where the artifact was written
    verdict: str = ""
    monotonicity_violations: list = field(default_factory=list)
    seed: int = 0
    config_echo: dict | None = None

    def k1_kernel(self):
        if self.kernel_k1 is None:
            return None
        return kernel_from_dict(self.kernel_k1)


def assemble_verdict(crossed: bool, diag_interchangeable: bool) -> str:
    """Pure verdict rule from the crossing flag and the Gram-matrix call."""
    if not crossed:
        return "decision not changed within schedule"
    return "non-robust" if diag_interchangeable else "failed to find non-robustness"


def _draw_grid(gp0: FittedGp, functional: FunctionalSpec, size: int) -> np.ndarray:
    """Plot grid: uniform span [min X, max(x*, max X)] plus the training inputs."""
    x = gp0.data.X[:, 0]
    lo = float(np.min(x))
    hi = max(float(np.max(x)), float(functional.point[0]))
    grid = np.concatenate([np.linspace(lo, hi, size), x])
    return np.unique(grid)[:, None]


def run_workflow(
    gp0: FittedGp,
    functional: FunctionalSpec,
    threshold: float,
    schedule,
    engine: str = "spectral",
    engine_config=None,
    diagnostics: DiagnosticsConfig | None = None,
    seed: int = 0,
    crossing_tolerance: float = 0.0,
) -> SensitivityReport:
    """Run the full sensitivity workflow on a fitted model.

    ``schedule`` is a nonempty increasing sequence of epsilon values.  The
    best solution of each epsilon warm-starts the next, which keeps the
    best-functional trace monotone; any residual decrease beyond 1e-6 is
    recorded in ``monotonicity_violations`` instead of silently accepted.
    Requires F*(k0) < threshold; to study the other side of the decision,
    negate the functional and the threshold.
    """
    schedule = [float(e) for e in schedule]
    if not schedule:
        raise ValidationError("epsilon schedule must be nonempty")
    if any(e2 <= e1 for e1, e2 in zip(schedule, schedule[1:])):
        raise ValidationError("epsilon schedule must be strictly increasing")
    if engine not in ("spectral", "warp"):
        raise ValidationError(f"unknown engine {engine!r}")
    diagnostics = diagnostics or DiagnosticsConfig()

    f0 = evaluate_functional(gp0, functional)
    if f0 >= threshold:
        raise ValidationError(
            f"the baseline functional {f0:.6g} already meets the threshold {threshold:.6g}; "
            "flip the decision's direction (maximize -F* against -threshold) instead"
        )

    report = SensitivityReport(
        threshold=threshold,
        functional=functional,
        fstar_baseline=f0,
        engine=engine,
        seed=seed,
    )

    if engine == "spectral":
        cfg = engine_config or SpectralEngineConfig()
        omegas = default_grid(gp0.kernel, cfg.grid_size, cfg.omega_max)
        base = density_of_kernel(gp0.kernel, omegas)
        k1 = None
        warm = None
        prev_best = None
        for eps in schedule:
            box = SpectralBox(base, eps)
            grid, fbest, info = maximize_spectral(
                gp0, functional, box,
                steps=cfg.steps, step_size=cfg.step_size,
                restarts=cfg.restarts, seed=seed, warm_start=warm,
            )
            entry = {
                "epsilon": eps,
                "best_fstar": fbest,
                "best_restart": info["best_index"],
                "aborted_restarts": sum(1 for r in info["restarts"] if r["aborted"]),
            }
            report.schedule.append(entry)
            if prev_best is not None and fbest < prev_best - 1e-6:
                report.monotonicity_violations.append(
                    {"epsilon": eps, "drop": prev_best - fbest}
                )
            prev_best = fbest
            warm = grid.values
            k1 = grid.to_kernel()
            if fbest >= threshold - crossing_tolerance:
                report.crossed = True
                report.crossing_epsilon = eps
                break
    else:
        cfg = engine_config or WarpEngineConfig()
        if cfg.regularizer_grid is None:
            reg_grid = np.vstack([gp0.data.X, functional.point[None, :]])
        else:
            reg_grid = np.asarray(cfg.regularizer_grid, dtype=float)
        k1 = None
        warm = None
        prev_best = None
        for eps in schedule:
            spec = WarpObjectiveSpec(
                threshold=threshold, grid=reg_grid, epsilon=eps,
                warp_paths=cfg.warp_paths, loss=cfg.loss,
            )
            net, fbest, info = minimize_warp(
                gp0, functional, spec,
                hidden_sizes=cfg.hidden_sizes, init_scale=cfg.init_scale,
                steps=cfg.steps, step_size=cfg.step_size,
                restarts=cfg.restarts, seed=seed, warm_start=warm,
            )
            entry = {
                "epsilon": eps,
                "best_fstar": fbest,
                "best_restart": info["best_index"],
                "objective": info["objective"],
                "aborted_restarts": sum(1 for r in info["restarts"] if r["aborted"]),
            }
            report.schedule.append(entry)
            if prev_best is not None and fbest < prev_best - 1e-6:
                report.monotonicity_violations.append(
                    {"epsilon": eps, "drop": prev_best - fbest}
                )
            prev_best = fbest
            warm = net
            k1 = warped_kernel(gp0.kernel, net, cfg.warp_paths)
            if fbest >= threshold - crossing_tolerance:
                report.crossed = True
                report.crossing_epsilon = eps
                break

    report.kernel_k1 = kernel_to_dict(k1)
    report.fstar_k1 = evaluate_functional(gp0.with_kernel(k1), functional)

    hp = laplace_hyper_posterior(gp0)
    frob = frobenius_histogram(
        gp0, k1, hp, R=diagnostics.n_samples, seed=seed,
        rule=diagnostics.rule, rule_q=diagnostics.rule_q,
    )
    report.frobenius = frob

    if gp0.data.dim == 1:
        draws = noise_matched_draws(
            [gp0.kernel, k1],
            _draw_grid(gp0, functional, diagnostics.draw_grid_size),
            diagnostics.n_draws, seed=seed, labels=("original", "perturbed"),
        )
        report.draw_data = draw_report(draws)

    report.verdict = assemble_verdict(report.crossed, frob.interchangeable)
    return report


# ----------------------------------------------------------------------
# report serialization: hierarchical key-value text with 17-digit floats
# ----------------------------------------------------------------------
class _ReportDumper(yaml.SafeDumper):
    pass


def _float_representer(dumper, value):
    if value != value:  # NaN
        return dumper.represent_scalar("tag:yaml.org,2002:float", ".nan")
    if value in (float("inf"), float("-inf")):
        return dumper.represent_scalar("tag:yaml.org,2002:float",
                                       ".inf" if value > 0 else "-.inf")
    # keep the scalar implicitly float-typed: YAML needs a '.' in the mantissa
    text = format(value, ".17g")
    if "." not in text:
        if "e" in text:
            mant, _, exp = text.partition("e")
            text = f"{mant}.0e{exp}"
        else:
            text += ".0"
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


_ReportDumper.add_representer(float, _float_representer)


def _pyfloat(x):
    return None if x is None else float(x)


def report_to_dict(report: SensitivityReport) -> dict:
    frob = report.frobenius
    return {
        "schema": REPORT_SCHEMA,
        "verdict": report.verdict,
        "threshold": _pyfloat(report.threshold),
        "engine": report.engine,
        "seed": int(report.seed),
        "functional": report.functional.to_dict(),
        "fstar_baseline": _pyfloat(report.fstar_baseline),
        "schedule": [
            {k: (_pyfloat(v) if isinstance(v, float) else v) for k, v in entry.items()}
            for entry in report.schedule
        ],
        "crossed": bool(report.crossed),
        "crossing_epsilon": _pyfloat(report.crossing_epsilon),
        "fstar_k1": _pyfloat(report.fstar_k1),
        "kernel_k1": report.kernel_k1,
        "diagnostics": None if frob is None else {
            "reference_norm": _pyfloat(frob.reference_norm),
            "candidate": _pyfloat(frob.candidate),
            "samples": [float(v) for v in frob.samples],
            "rule": frob.rule,
            "rule_q": _pyfloat(frob.rule_q),
            "verdict": frob.verdict,
        },
        "draws_file": report.draw_file,
        "monotonicity_violations": [
            {"epsilon": _pyfloat(m["epsilon"]), "drop": _pyfloat(m["drop"])}
            for m in report.monotonicity_violations
        ],
        "config": report.config_echo,
    }


def report_to_yaml(report: SensitivityReport) -> str:
    return yaml.dump(report_to_dict(report), Dumper=_ReportDumper,
                     sort_keys=False, default_flow_style=False)


def report_from_yaml(text: str) -> dict:
    """Parse a serialized report back to plain containers.

    Floats round-trip exactly (they are emitted with 17 significant
    digits).  Use :func:`kernels.kernel_from_dict` on ``kernel_k1`` and
    ``FunctionalSpec.from_dict`` on ``functional`` to rebuild objects.
    """
    d = yaml.safe_load(text)
    if not isinstance(d, dict) or d.get("schema") != REPORT_SCHEMA:
        raise ValidationError("not a recognized sensitivity report")
    return d
