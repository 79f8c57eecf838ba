"""Command-line front end.

Subcommands:

* ``synth``    - write the bundled synthetic benchmark dataset as CSV
* ``fit``      - fit hyperparameters by maximum marginal likelihood
* ``perturb``  - solve the perturbation problem at a single epsilon
* ``workflow`` - the full expanding-epsilon sensitivity workflow
* ``diagnose`` - interchangeability diagnostics for two serialized kernels

Exit codes: 0 = completed without a robustness finding, 10 = the workflow
verdict is "non-robust", 1 = any error.  Verbosity is controlled by the
GPSENS_VERBOSITY environment variable (0 = quiet, 1 = info, 2 = debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import RunConfig, load_config
from .data import generate_synthetic, load_csv, preprocess
from .diagnostics import (
    draw_report,
    frobenius_histogram,
    histogram_report,
    noise_matched_draws,
)
from .errors import ConfigError, GpsensError
from .functionals import FunctionalSpec
from .gp import Dataset, FittedGp, fit_mmle, laplace_hyper_posterior
from .kernels import kernel_from_dict, kernel_to_dict
from .spectral import SpectralBox, default_grid, density_of_kernel, maximize_spectral
from .warp import WarpObjectiveSpec, minimize_warp, warped_kernel
from .workflow import (
    SensitivityReport,
    _draw_grid,
    report_to_yaml,
    run_workflow,
)

log = logging.getLogger("gpsens")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NON_ROBUST = 10


def _setup_logging():
    level = {"0": logging.WARNING, "1": logging.INFO, "2": logging.DEBUG}.get(
        os.environ.get("GPSENS_VERBOSITY", "1"), logging.INFO
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s")


def _dump_yaml(obj, path: Path):
    from .workflow import _ReportDumper

    path.write_text(yaml.dump(obj, Dumper=_ReportDumper, sort_keys=False))


def _load_data(cfg: RunConfig):
    if cfg.data_source == "synthetic":
        dataset, info = generate_synthetic(cfg.seed), {"rows": 35, "dropped": 0}
    else:
        dataset, info = load_csv(cfg.data_path, cfg.data_format)
        log.info("loaded %d rows from %s (%d dropped)", info["rows"], cfg.data_path,
                 info["dropped"])
    if cfg.input_max is not None:
        keep = dataset.X[:, 0] <= cfg.input_max
        dataset = Dataset(dataset.X[keep], dataset.y[keep])
        log.info("kept %d rows with input <= %s", dataset.n, cfg.input_max)
    return dataset, info


def _fit(cfg: RunConfig, dataset: Dataset) -> FittedGp:
    kernel = cfg.build_kernel()
    gp0 = fit_mmle(
        dataset, kernel, noise_variance=cfg.noise_variance,
        restarts=cfg.fit_restarts, seed=cfg.seed, fixed=tuple(cfg.fixed), mean=cfg.mean,
    )
    log.info("MMLE done: evidence %.6g, gradient norm %.3g", gp0.log_marginal, gp0.grad_norm)
    return gp0


def _build_functional(cfg: RunConfig, gp0: FittedGp, record) -> tuple[FunctionalSpec, float]:
    """Functional plus the threshold mapped into model space / direction."""
    if cfg.functional_kind == "posterior-mean":
        functional = FunctionalSpec.posterior_mean(cfg.xstar)
    elif cfg.functional_kind == "posterior-quantile":
        functional = FunctionalSpec.posterior_quantile(cfg.xstar, cfg.q, cfg.include_noise)
    else:
        functional = FunctionalSpec.relative_change(gp0, cfg.xstar)

    threshold = cfg.threshold
    if cfg.threshold_space == "raw" and record is not None and record.mode != "none":
        if cfg.functional_kind == "relative-change":
            raise ConfigError(
                "threshold_space 'raw' applies to mean/quantile functionals only; "
                "relative-change thresholds are already scale-free"
            )
        threshold = record.apply_scalar(threshold)
        log.info("threshold %.6g (raw) -> %.6g (model space)", cfg.threshold, threshold)

    if cfg.direction == "below":
        functional = functional.negated()
        threshold = -threshold
    return functional, threshold


def _out_dir(cfg: RunConfig, args) -> Path:
    out = args.out or cfg.out or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.raw["seed"] = args.seed
    if getattr(args, "direction", None):
        cfg.direction = args.direction
        cfg.raw.setdefault("functional", {})["direction"] = args.direction
    return cfg


def _maybe_render_plots(args, out: Path, report: SensitivityReport):
    if not args.render_plots:
        return
    try:
        import matplotlib
    except ImportError:
        log.warning("matplotlib not installed; skipping plot rendering "
                    "(pip install 'gpsens[plots]')")
        return
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .diagnostics import parse_draw_report

    if report.draw_data is not None:
        parsed = parse_draw_report(report.draw_data)
        fig, axes = plt.subplots(1, len(parsed["series"]), figsize=(10, 4), sharey=True)
        axes = np.atleast_1d(axes)
        for ax, (label, mat) in zip(axes, parsed["series"].items()):
            ax.fill_between(parsed["points"], parsed["band_lower"], parsed["band_upper"],
                            color="0.85", label="99.7% band (original)")
            ax.plot(parsed["points"], mat, lw=1.0)
            ax.set_title(label)
            ax.set_xlabel("input")
        fig.tight_layout()
        fig.savefig(out / "draws.png", dpi=150)
        plt.close(fig)
    if report.frobenius is not None:
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.hist(report.frobenius.samples, bins=40, color="tab:blue", alpha=0.8,
                label="hyperparameter samples")
        ax.axvline(report.frobenius.candidate, color="tab:red", lw=2, label="perturbed kernel")
        ax.set_xlabel("relative Frobenius distance to the original Gram matrix")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "histogram.png", dpi=150)
        plt.close(fig)
    log.info("rendered plots under %s", out)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def _cmd_synth(args) -> int:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_synthetic(args.seed if args.seed is not None else 0)
    lines = ["x,y"] + [
        f"{format(x, '.17g')},{format(y, '.17g')}"
        for x, y in zip(dataset.X[:, 0], dataset.y)
    ]
    path = out / "synthetic.csv"
    path.write_text("\n".join(lines) + "\n")
    log.info("wrote %s (%d rows)", path, dataset.n)
    return EXIT_OK


def _cmd_fit(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(cfg, args)
    dataset, _ = _load_data(cfg)
    dataset, record = preprocess(dataset, cfg.preprocess)
    gp0 = _fit(cfg, dataset)
    _dump_yaml(
        {
            "kernel": kernel_to_dict(gp0.kernel),
            "noise_variance": float(gp0.noise_variance),
            "mean_const": float(gp0.mean_const),
            "log_marginal": float(gp0.log_marginal),
            "grad_norm": float(gp0.grad_norm),
            "preprocess": record.to_dict(),
        },
        out / "fit.yaml",
    )
    log.info("wrote %s", out / "fit.yaml")
    return EXIT_OK


def _cmd_perturb(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(cfg, args)
    dataset, _ = _load_data(cfg)
    dataset, record = preprocess(dataset, cfg.preprocess)
    gp0 = _fit(cfg, dataset)
    functional, threshold = _build_functional(cfg, gp0, record)
    eps = args.epsilon
    if eps is None or eps <= 0.0:
        raise ConfigError("perturb needs --epsilon > 0")

    if cfg.engine == "spectral":
        omegas = default_grid(gp0.kernel, cfg.spectral.grid_size, cfg.spectral.omega_max)
        base = density_of_kernel(gp0.kernel, omegas)
        grid, fstar, info = maximize_spectral(
            gp0, functional, SpectralBox(base, eps),
            steps=cfg.spectral.steps, step_size=cfg.spectral.step_size,
            restarts=cfg.spectral.restarts, seed=cfg.seed,
        )
        k1 = grid.to_kernel()
    else:
        reg_grid = (np.vstack([dataset.X, functional.point[None, :]])
                    if cfg.warp.regularizer_grid is None
                    else np.asarray(cfg.warp.regularizer_grid, dtype=float))
        spec = WarpObjectiveSpec(threshold=threshold, grid=reg_grid, epsilon=eps,
                                 warp_paths=cfg.warp.warp_paths, loss=cfg.warp.loss)
        net, fstar, info = minimize_warp(
            gp0, functional, spec, hidden_sizes=cfg.warp.hidden_sizes,
            init_scale=cfg.warp.init_scale, steps=cfg.warp.steps,
            step_size=cfg.warp.step_size, restarts=cfg.warp.restarts, seed=cfg.seed,
        )
        k1 = warped_kernel(gp0.kernel, net, cfg.warp.warp_paths)

    _dump_yaml(
        {
            "epsilon": float(eps),
            "fstar": float(fstar),
            "threshold": float(threshold),
            "kernel_k1": kernel_to_dict(k1),
            "best_restart": info["best_index"],
        },
        out / "perturb.yaml",
    )
    log.info("epsilon %.4g: best functional %.6g (threshold %.6g)", eps, fstar, threshold)
    return EXIT_OK


def _cmd_workflow(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(cfg, args)
    dataset, _ = _load_data(cfg)
    dataset, record = preprocess(dataset, cfg.preprocess)
    gp0 = _fit(cfg, dataset)
    functional, threshold = _build_functional(cfg, gp0, record)
    report = run_workflow(
        gp0, functional, threshold, cfg.epsilons,
        engine=cfg.engine,
        engine_config=cfg.spectral if cfg.engine == "spectral" else cfg.warp,
        diagnostics=cfg.diagnostics,
        seed=cfg.seed,
        crossing_tolerance=cfg.crossing_tolerance,
    )
    report.config_echo = cfg.raw
    if report.draw_data is not None:
        report.draw_file = "draws.tsv"
        (out / "draws.tsv").write_text(report.draw_data)
    (out / "report.yaml").write_text(report_to_yaml(report))
    (out / "histogram.tsv").write_text(histogram_report(report.frobenius))
    _maybe_render_plots(args, out, report)

    log.info("verdict: %s", report.verdict)
    print(report.verdict)
    return EXIT_NON_ROBUST if report.verdict == "non-robust" else EXIT_OK


def _cmd_diagnose(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(cfg, args)
    dataset, _ = _load_data(cfg)
    dataset, record = preprocess(dataset, cfg.preprocess)

    k0 = kernel_from_dict(yaml.safe_load(Path(args.k0).read_text()))
    k1 = kernel_from_dict(yaml.safe_load(Path(args.k1).read_text()))
    gp0 = FittedGp(dataset, k0, cfg.noise_variance,
                   mean_const=0.0 if cfg.mean == "zero" else float(np.mean(dataset.y)))
    hp = laplace_hyper_posterior(gp0)
    frob = frobenius_histogram(gp0, k1, hp, R=cfg.diagnostics.n_samples, seed=cfg.seed,
                               rule=cfg.diagnostics.rule, rule_q=cfg.diagnostics.rule_q)
    (out / "histogram.tsv").write_text(histogram_report(frob))
    payload = {
        "verdict": frob.verdict,
        "candidate": float(frob.candidate),
        "max_sample": float(np.max(frob.samples)),
        "rule": frob.rule,
    }
    if dataset.dim == 1:
        functional = FunctionalSpec.posterior_mean(cfg.xstar)
        draws = noise_matched_draws(
            [k0, k1], _draw_grid(gp0, functional, cfg.diagnostics.draw_grid_size),
            cfg.diagnostics.n_draws, seed=cfg.seed, labels=("original", "perturbed"),
        )
        (out / "draws.tsv").write_text(draw_report(draws))
    _dump_yaml(payload, out / "diagnose.yaml")
    log.info("Gram-matrix verdict: %s", frob.verdict)
    print(frob.verdict)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpsens",
        description="Sensitivity of Gaussian-process decisions to the kernel choice",
    )
    parser.add_argument("--version", action="version", version=f"gpsens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("synth", help="write the synthetic benchmark dataset")
    common(p, config_required=False)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit", help="MMLE fit only")
    common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("perturb", help="solve the perturbation problem at one epsilon")
    common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--direction", choices=("above", "below"), default=None)
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("workflow", help="full expanding-epsilon sensitivity workflow")
    common(p)
    p.add_argument("--direction", choices=("above", "below"), default=None)
    p.add_argument("--render-plots", action="store_true",
                   help="also render static PNG plots (requires matplotlib)")
    p.set_defaults(func=_cmd_workflow)

    p = sub.add_parser("diagnose", help="diagnostics for two serialized kernels")
    common(p)
    p.add_argument("--k0", required=True, help="YAML file with the original kernel")
    p.add_argument("--k1", required=True, help="YAML file with the candidate kernel")
    p.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GpsensError as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR
    except OSError as e:
        log.error("i/o error: %s", e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
