"""Run configuration: YAML schema, validation, kernel presets.

One config file describes a full experiment: data source, preprocessing,
kernel template, functional and threshold, engine parameters, the epsilon
schedule and the diagnostics settings.  Validation is strict; unknown
keys are rejected so typos cannot silently change an experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .kernels import Kernel, parse_kernel
from .workflow import DiagnosticsConfig, SpectralEngineConfig, WarpEngineConfig

__all__ = ["RunConfig", "load_config", "parse_config", "KERNEL_PRESETS"]


# Kernel presets.  "heartrate" is the vital-signs template (Matern 5/2 plus
# squared exponential on standardized log observations).  "maunaloa" is the
# classic four-part CO2 forecasting kernel: long-term trend, quasi-periodic
# seasonal term (periodic amplitude and period stay fixed; the multiplying
# SE carries the amplitude), medium-term variation, and short-scale noise.
KERNEL_PRESETS: dict = {
    "heartrate": {
        "expression": "matern52(1.0, 1.0) + se(1.0, 1.0)",
        "fixed": [],
        "noise_variance": 0.1,
        "mean": "zero",
    },
    "maunaloa": {
        "expression": (
            "se(68.58, 69.09)"
            " + se(2.55, 87.60) * periodic(1.0, 1.44, 1.0)"
            " + rq(0.66, 1.18, 0.74)"
            " + se(0.18, 0.13)"
        ),
        "fixed": ["sum.1.product.1.periodic.amplitude", "sum.1.product.1.periodic.period"],
        "noise_variance": 0.19**2,
        "mean": "train",
    },
}


@dataclass
class RunConfig:
    seed: int = 0
    out: str | None = None
    # data
    data_source: str = "synthetic"          # "synthetic" | "csv"
    data_path: str | None = None
    data_format: str = "generic"
    input_max: float | None = None          # keep rows with input <= bound
    preprocess: str = "none"
    # model
    kernel_expression: str | None = None
    kernel_preset: str | None = None
    noise_variance: float = 1.0
    mean: object = "zero"
    fixed: list = field(default_factory=list)
    fit_restarts: int = 5
    # decision
    functional_kind: str = "posterior-mean"
    xstar: list = field(default_factory=lambda: [0.0])
    q: float = 0.95
    include_noise: bool = False
    direction: str = "above"
    threshold: float = 0.0
    threshold_space: str = "model"          # "model" | "raw"
    # engine
    engine: str = "spectral"
    epsilons: list = field(default_factory=list)
    crossing_tolerance: float = 0.0
    spectral: SpectralEngineConfig = field(default_factory=SpectralEngineConfig)
    warp: WarpEngineConfig = field(default_factory=WarpEngineConfig)
    # diagnostics
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    # verbatim parsed mapping, echoed into reports
    raw: dict = field(default_factory=dict, repr=False)

    def build_kernel(self) -> Kernel:
        return parse_kernel(self.kernel_expression)


def _expect(mapping, path, allowed):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")


def _number(value, path, *, minimum=None, strict=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None:
        if strict and not value > minimum:
            raise ConfigError(f"{path}: must be > {minimum}, got {value}")
        if not strict and not value >= minimum:
            raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return int(value) if integer else float(value)


def _choice(value, path, options):
    if value not in options:
        raise ConfigError(f"{path}: expected one of {options}, got {value!r}")
    return value


def _rule_q(value):
    q = _number(value, "diagnostics.rule_q", minimum=0.0, strict=True)
    if not q < 1.0:
        raise ConfigError("diagnostics.rule_q: must be < 1")
    return q


def _schedule(spec, path) -> list:
    """Either an explicit increasing list or {start, stop, count, spacing}."""
    if isinstance(spec, list):
        eps = [_number(v, f"{path}[{i}]", minimum=0.0, strict=True) for i, v in enumerate(spec)]
    elif isinstance(spec, dict):
        _expect(spec, path, {"start", "stop", "count", "spacing"})
        start = _number(spec.get("start"), f"{path}.start", minimum=0.0, strict=True)
        stop = _number(spec.get("stop"), f"{path}.stop", minimum=0.0, strict=True)
        count = _number(spec.get("count"), f"{path}.count", minimum=2, integer=True)
        spacing = _choice(spec.get("spacing", "linear"), f"{path}.spacing", ("linear", "log"))
        if spacing == "linear":
            eps = list(np.linspace(start, stop, count))
        else:
            eps = list(np.geomspace(start, stop, count))
    else:
        raise ConfigError(f"{path}: expected a list or a range mapping")
    if not eps:
        raise ConfigError(f"{path}: schedule must be nonempty")
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise ConfigError(f"{path}: schedule must be strictly increasing")
    return [float(e) for e in eps]


_TOP_KEYS = {
    "seed", "out", "data", "preprocess", "kernel", "fit",
    "functional", "threshold", "threshold_space", "engine", "diagnostics",
}


def parse_config(doc: dict) -> RunConfig:
    """Validate a parsed YAML mapping and build a RunConfig."""
    _expect(doc, "config", _TOP_KEYS)
    cfg = RunConfig(raw=doc)

    if "seed" in doc:
        cfg.seed = _number(doc["seed"], "seed", minimum=0, integer=True)
    if "out" in doc and doc["out"] is not None:
        cfg.out = str(doc["out"])

    data = doc.get("data", {"source": "synthetic"})
    _expect(data, "data", {"source", "path", "format", "input_max"})
    cfg.data_source = _choice(data.get("source", "synthetic"), "data.source",
                              ("synthetic", "csv"))
    if cfg.data_source == "csv":
        if not data.get("path"):
            raise ConfigError("data.path: required when data.source is 'csv'")
        cfg.data_path = str(data["path"])
        cfg.data_format = _choice(data.get("format", "generic"), "data.format",
                                  ("generic", "maunaloa"))
    if data.get("input_max") is not None:
        cfg.input_max = _number(data["input_max"], "data.input_max")

    cfg.preprocess = _choice(doc.get("preprocess", "none"), "preprocess",
                             ("none", "log", "standardize", "log+standardize"))

    kernel = doc.get("kernel")
    if kernel is None:
        raise ConfigError("kernel: section is required")
    _expect(kernel, "kernel", {"expression", "preset", "noise_variance", "mean", "fixed"})
    preset_name = kernel.get("preset")
    if preset_name is not None:
        if preset_name not in KERNEL_PRESETS:
            raise ConfigError(f"kernel.preset: unknown preset {preset_name!r} "
                              f"(available: {sorted(KERNEL_PRESETS)})")
        preset = KERNEL_PRESETS[preset_name]
        cfg.kernel_preset = preset_name
        cfg.kernel_expression = preset["expression"]
        cfg.fixed = list(preset["fixed"])
        cfg.noise_variance = preset["noise_variance"]
        cfg.mean = preset["mean"]
    if kernel.get("expression") is not None:
        cfg.kernel_expression = str(kernel["expression"])
    if cfg.kernel_expression is None:
        raise ConfigError("kernel: needs an 'expression' or a 'preset'")
    parse_kernel(cfg.kernel_expression)  # fail early on bad templates
    if "noise_variance" in kernel:
        cfg.noise_variance = _number(kernel["noise_variance"], "kernel.noise_variance",
                                     minimum=0.0, strict=True)
    if "mean" in kernel:
        m = kernel["mean"]
        cfg.mean = m if m in ("zero", "train") else _number(m, "kernel.mean")
    if "fixed" in kernel:
        if not isinstance(kernel["fixed"], list):
            raise ConfigError("kernel.fixed: expected a list of hyperparameter paths")
        cfg.fixed = [str(f) for f in kernel["fixed"]]

    fit = doc.get("fit", {})
    _expect(fit, "fit", {"restarts"})
    if "restarts" in fit:
        cfg.fit_restarts = _number(fit["restarts"], "fit.restarts", minimum=1, integer=True)

    functional = doc.get("functional")
    if functional is None:
        raise ConfigError("functional: section is required")
    _expect(functional, "functional", {"kind", "xstar", "q", "include_noise", "direction"})
    cfg.functional_kind = _choice(
        functional.get("kind"), "functional.kind",
        ("posterior-mean", "posterior-quantile", "relative-change"),
    )
    xstar = functional.get("xstar")
    if isinstance(xstar, (int, float)) and not isinstance(xstar, bool):
        xstar = [xstar]
    if not isinstance(xstar, list) or not xstar:
        raise ConfigError("functional.xstar: expected a number or a nonempty list")
    cfg.xstar = [_number(v, f"functional.xstar[{i}]") for i, v in enumerate(xstar)]
    if "q" in functional:
        q = _number(functional["q"], "functional.q", minimum=0.0, strict=True)
        if not q < 1.0:
            raise ConfigError("functional.q: must be < 1")
        cfg.q = q
    if "include_noise" in functional:
        if not isinstance(functional["include_noise"], bool):
            raise ConfigError("functional.include_noise: expected a boolean")
        cfg.include_noise = functional["include_noise"]
    if "direction" in functional:
        cfg.direction = _choice(functional["direction"], "functional.direction",
                                ("above", "below"))

    if "threshold" not in doc:
        raise ConfigError("threshold: key is required")
    cfg.threshold = _number(doc["threshold"], "threshold")
    cfg.threshold_space = _choice(doc.get("threshold_space", "model", ),
                                  "threshold_space", ("model", "raw"))

    engine = doc.get("engine")
    if engine is None:
        raise ConfigError("engine: section is required")
    _expect(engine, "engine",
            {"kind", "epsilons", "crossing_tolerance", "spectral", "warp"})
    cfg.engine = _choice(engine.get("kind", "spectral"), "engine.kind", ("spectral", "warp"))
    if "epsilons" not in engine:
        raise ConfigError("engine.epsilons: key is required")
    cfg.epsilons = _schedule(engine["epsilons"], "engine.epsilons")
    if "crossing_tolerance" in engine:
        cfg.crossing_tolerance = _number(engine["crossing_tolerance"],
                                         "engine.crossing_tolerance", minimum=0.0)
    spectral = engine.get("spectral", {})
    _expect(spectral, "engine.spectral",
            {"grid_size", "omega_max", "steps", "step_size", "restarts"})
    cfg.spectral = SpectralEngineConfig(
        grid_size=_number(spectral.get("grid_size", 100), "engine.spectral.grid_size",
                          minimum=2, integer=True),
        omega_max=(None if spectral.get("omega_max") is None
                   else _number(spectral["omega_max"], "engine.spectral.omega_max",
                                minimum=0.0, strict=True)),
        steps=_number(spectral.get("steps", 500), "engine.spectral.steps",
                      minimum=1, integer=True),
        step_size=(None if spectral.get("step_size") is None
                   else _number(spectral["step_size"], "engine.spectral.step_size",
                                minimum=0.0, strict=True)),
        restarts=_number(spectral.get("restarts", 25), "engine.spectral.restarts",
                         minimum=1, integer=True),
    )
    warp = engine.get("warp", {})
    _expect(warp, "engine.warp",
            {"hidden", "init_scale", "steps", "step_size", "restarts",
             "regularizer_grid", "warp_paths", "unwarped"})
    hidden = warp.get("hidden", [50, 50])
    if not isinstance(hidden, list) or not hidden:
        raise ConfigError("engine.warp.hidden: expected a nonempty list of layer sizes")
    warp_paths = warp.get("warp_paths")
    unwarped = warp.get("unwarped")
    if warp_paths is not None and unwarped is not None:
        raise ConfigError("engine.warp: give either warp_paths or unwarped, not both")
    if unwarped is not None:
        from .warp import warp_paths_excluding

        warp_paths = list(warp_paths_excluding(parse_kernel(cfg.kernel_expression),
                                               [str(p) for p in unwarped]))
    cfg.warp = WarpEngineConfig(
        hidden_sizes=tuple(
            _number(h, f"engine.warp.hidden[{i}]", minimum=1, integer=True)
            for i, h in enumerate(hidden)
        ),
        init_scale=_number(warp.get("init_scale", 0.1), "engine.warp.init_scale",
                           minimum=0.0, strict=True),
        steps=_number(warp.get("steps", 300), "engine.warp.steps", minimum=1, integer=True),
        step_size=(None if warp.get("step_size") is None
                   else _number(warp["step_size"], "engine.warp.step_size",
                                minimum=0.0, strict=True)),
        restarts=_number(warp.get("restarts", 5), "engine.warp.restarts",
                         minimum=1, integer=True),
        regularizer_grid=warp.get("regularizer_grid"),
        warp_paths=None if warp_paths is None else tuple(str(p) for p in warp_paths),
    )

    diag = doc.get("diagnostics", {})
    _expect(diag, "diagnostics", {"samples", "rule", "rule_q", "draws", "grid_size"})
    cfg.diagnostics = DiagnosticsConfig(
        n_samples=_number(diag.get("samples", 500), "diagnostics.samples",
                          minimum=1, integer=True),
        rule=_choice(diag.get("rule", "max"), "diagnostics.rule", ("max", "quantile")),
        rule_q=_rule_q(diag.get("rule_q", 0.95)),
        n_draws=_number(diag.get("draws", 4), "diagnostics.draws", minimum=1, integer=True),
        draw_grid_size=_number(diag.get("grid_size", 200), "diagnostics.grid_size",
                               minimum=2, integer=True),
    )
    return cfg


def load_config(path) -> RunConfig:
    """Load and validate a YAML config file."""
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return parse_config(doc)
