"""Typed errors shared across the estimation modules.

Estimation routines raise subclasses of :class:`EstimationError` so callers
(and the CLI) can map failures to stable codes instead of parsing messages.
"""


class EstimationError(Exception):
    """Base class for all estimation failures."""

    code = "estimation_error"


class DegenerateNeighborhoodError(EstimationError):
    """Every kernel weight underflowed to zero at the query point.

    Distinguishes "no data near the query" from a legitimate zero-density
    estimate.
    """

    code = "degenerate_neighborhood"


class SingularCovarianceError(EstimationError):
    """The local second-moment matrix is numerically singular.

    Parameters
    ----------
    smallest_eigenvalue : float
        Smallest eigenvalue of the local covariance, reported for diagnosis.
    """

    code = "singular_covariance"

    def __init__(self, smallest_eigenvalue, message=None):
        self.smallest_eigenvalue = float(smallest_eigenvalue)
        if message is None:
            message = (
                "local covariance is numerically singular "
                f"(smallest eigenvalue {self.smallest_eigenvalue:.3e})"
            )
        super().__init__(message)


class NonpositiveDensityError(EstimationError):
    """A log-scale quantity was requested where the density estimate is <= 0."""

    code = "nonpositive_density"


class InfeasibleTripleError(EstimationError):
    """No exponential-quadratic model reproduces the requested moment triple."""

    code = "infeasible_triple"


class SolverError(EstimationError):
    """Iterative solver failed to converge.

    Parameters
    ----------
    residual : float
        Norm of the residual at the last iterate.
    """

    code = "solver_failure"

    def __init__(self, residual, message=None):
        self.residual = float(residual)
        if message is None:
            message = f"solver did not converge (residual {self.residual:.3e})"
        super().__init__(message)


class UnsupportedKernelError(EstimationError):
    """The requested operation needs kernel features this kernel lacks."""

    code = "unsupported_kernel"
