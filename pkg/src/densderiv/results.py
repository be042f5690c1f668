"""Result container and scale transforms shared by the four paradigms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonpositiveDensityError
from .hspace import symmetrize


@dataclass
class Estimate:
    """Point estimate of a density (or log-density) and its derivatives.

    Attributes
    ----------
    value : float
        Estimated function value; NaN when the paradigm does not produce one.
    gradient : ndarray of shape (d,)
    hessian : ndarray of shape (d, d)
    scale : str
        Either ``"density"`` or ``"log"``.
    flags : tuple of str
        Non-fatal warnings, e.g. ``"nonpositive_value"`` when a signed
        estimator returned a value <= 0.
    """

    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    scale: str
    flags: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.value = float(self.value)
        self.gradient = np.asarray(self.gradient, dtype=float)
        self.hessian = symmetrize(self.hessian)
        if self.scale not in ("density", "log"):
            raise ValueError("scale must be 'density' or 'log'")


def to_log_scale(est: Estimate) -> Estimate:
    """Convert a density-scale estimate to the log scale.

    Uses the chain rule on (f, Df, D2f):
    ``log f``, ``Df / f`` and ``D2f / f - (Df/f)(Df/f)^T``.

    Raises
    ------
    NonpositiveDensityError
        If the density value is not strictly positive.
    """
    if est.scale == "log":
        return est
    f = est.value
    if not (f > 0.0):
        raise NonpositiveDensityError(
            f"cannot take logs: density estimate is {f:.6g}")
    grad = est.gradient / f
    hess = est.hessian / f - np.outer(grad, grad)
    return Estimate(np.log(f), grad, hess, "log", est.flags)


def to_density_scale(est: Estimate) -> Estimate:
    """Inverse of :func:`to_log_scale`."""
    if est.scale == "density":
        return est
    if not np.isfinite(est.value):
        raise NonpositiveDensityError(
            "log-scale estimate has no value component to exponentiate")
    f = np.exp(est.value)
    grad = f * est.gradient
    hess = f * (est.hessian + np.outer(est.gradient, est.gradient))
    return Estimate(f, grad, hess, "density", est.flags)
