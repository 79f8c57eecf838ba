"""gpsens: sensitivity of Gaussian-process decisions to the choice of kernel.

Given a fitted GP and a decision threshold on a posterior functional, the
toolkit searches a neighborhood of nearby kernels (spectral-density bands
for stationary kernels, neural input warps for non-stationary ones) for a
kernel that changes the decision, then renders interchangeability
diagnostics so an analyst can judge whether the decision is robust.
"""

__version__ = "0.1.0"

from .data import TransformRecord, generate_synthetic, load_csv, preprocess
from .diagnostics import (
    FrobeniusComparison,
    NoiseMatchedDraws,
    draw_report,
    frobenius_histogram,
    noise_matched_draws,
    relative_frobenius,
)
from .errors import (
    ConfigError,
    DataError,
    FitError,
    GpsensError,
    NumericalError,
    OptimizationError,
    UnsupportedError,
    ValidationError,
)
from .functionals import FunctionalSpec, evaluate_functional
from .gp import (
    Dataset,
    FittedGp,
    HyperPosterior,
    fit_mmle,
    laplace_hyper_posterior,
    log_marginal_likelihood,
    posterior,
    posterior_quantile,
    sample_hyperparameters,
)
from .kernels import (
    Kernel,
    Matern52,
    Periodic,
    Product,
    RationalQuadratic,
    Spectral,
    SquaredExponential,
    Sum,
    Warped,
    eval_kernel,
    gram,
    kernel_from_dict,
    kernel_to_dict,
    parse_kernel,
)
from .spectral import (
    SpectralBox,
    SpectralGrid,
    default_grid,
    density_of_kernel,
    functional_gradient,
    kernel_from_density,
    maximize_spectral,
)
from .warp import (
    WarpNet,
    WarpObjectiveSpec,
    minimize_warp,
    warp_forward,
    warp_gradient,
    warp_objective,
    warped_kernel,
)
from .workflow import (
    DiagnosticsConfig,
    SensitivityReport,
    SpectralEngineConfig,
    WarpEngineConfig,
    report_from_yaml,
    report_to_yaml,
    run_workflow,
)
