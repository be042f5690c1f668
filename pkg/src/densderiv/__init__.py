"""Local estimation of densities and their derivatives.

Five estimation paradigms share one bandwidth and kernel interface:
moment matching on localized polynomial averages ("M", with a refined
gradient variant "M3"), kernel density derivatives ("K"), a local
exponential-quadratic likelihood ("L"), and local score matching ("H").
Supporting modules provide the value/vector/matrix container the
estimators work in, kernel condition checks, bias and variance
constants, convergence-rate experiments, and proper local scoring
rules.
"""

from .asymptotics import (
    BandwidthPlan,
    BiasProfile,
    RateReport,
    RateRow,
    bias_constants,
    bias_curve,
    expected_estimate,
    rate_experiment,
    transfer_to_log,
    triple_bandwidth_experiment,
    variance_functional,
)
from .densities import GaussianMixture, experiment_stream
from .errors import (
    DegenerateNeighborhoodError,
    EstimationError,
    InfeasibleTripleError,
    NonpositiveDensityError,
    SingularCovarianceError,
    SolverError,
    UnsupportedKernelError,
)
from .estimators import (
    PARADIGMS,
    DerivativeEstimator,
    ModeSearchResult,
    ModeSeeker,
    estimate_at,
)
from .hspace import Jet, coord_count, coord_weights, symmetrize
from .kernels import (
    CustomKernel,
    GaussianKernel,
    Kernel,
    RectangularKernel,
    SphericalKernel,
    UniformBallKernel,
    kernel_by_name,
)
from .local_moments import (
    expected_moment_triple,
    local_moment,
    local_terms,
    moment_triple,
    normalized_moment,
)
from .results import Estimate, to_density_scale, to_log_scale
from .scoring import (
    KernelWindow,
    LogQuadratic,
    expected_score,
    localized_log_score,
    sq_score,
    strict_log_score,
    weighted_hyvarinen_score,
)

__version__ = "0.1.0"

__all__ = [
    "BandwidthPlan",
    "BiasProfile",
    "CustomKernel",
    "DegenerateNeighborhoodError",
    "DerivativeEstimator",
    "Estimate",
    "EstimationError",
    "GaussianKernel",
    "GaussianMixture",
    "InfeasibleTripleError",
    "Jet",
    "Kernel",
    "KernelWindow",
    "LogQuadratic",
    "ModeSearchResult",
    "ModeSeeker",
    "NonpositiveDensityError",
    "PARADIGMS",
    "RateReport",
    "RateRow",
    "RectangularKernel",
    "SingularCovarianceError",
    "SolverError",
    "SphericalKernel",
    "UniformBallKernel",
    "UnsupportedKernelError",
    "bias_constants",
    "bias_curve",
    "coord_count",
    "coord_weights",
    "estimate_at",
    "expected_estimate",
    "expected_moment_triple",
    "expected_score",
    "experiment_stream",
    "kernel_by_name",
    "local_moment",
    "local_terms",
    "localized_log_score",
    "moment_triple",
    "normalized_moment",
    "rate_experiment",
    "sq_score",
    "strict_log_score",
    "symmetrize",
    "to_density_scale",
    "to_log_scale",
    "transfer_to_log",
    "triple_bandwidth_experiment",
    "variance_functional",
    "weighted_hyvarinen_score",
]
