"""Localized scoring rules for exponential-quadratic candidates.

A kernel window turns a global scoring rule into a local one: candidates
are judged only where the window is positive, so a candidate needs to
match the shape of the truth near the window's center and nothing else.
The plain localized log score is insensitive to the candidate's overall
scaling; adding a binary-score term restores strictness, and the
resulting score is, up to candidate-independent terms, the objective the
local likelihood fit minimizes.  The weighted score-matching rule plays
the same role for the score-matching fit.

All scores are extended-real valued: a candidate whose mass against the
window diverges scores +inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import loglik
from .errors import UnsupportedKernelError
from .hspace import Jet
from .quadrature import ball_integrate, box_integrate


@dataclass(frozen=True)
class KernelWindow:
    """Weight function ``w(y) = h^-d K((y - center) / h)``.

    Parameters
    ----------
    kernel : Kernel
    center : ndarray of shape (d,)
    h : float
    """

    kernel: object
    center: np.ndarray
    h: float

    def __post_init__(self):
        object.__setattr__(
            self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "h", float(self.h))
        if self.center.shape != (self.kernel.d,):
            raise ValueError("window center must match the kernel dimension")
        if not self.h > 0:
            raise ValueError("window bandwidth must be positive")

    def _offsets(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return (y - self.center) / self.h

    def __call__(self, y):
        """Window values; scalar for a single point, (m,) for a batch."""
        y = np.asarray(y, dtype=float)
        vals = self.kernel(self._offsets(y)) / self.h ** self.kernel.d
        return float(vals[0]) if y.ndim == 1 else vals

    def grad(self, y):
        """Window gradients, shape (d,) or (m, d)."""
        if not self.kernel.differentiable:
            raise UnsupportedKernelError(
                f"{self.kernel.name} kernel window has no gradient")
        y = np.asarray(y, dtype=float)
        vals = self.kernel.grad(self._offsets(y)) \
            / self.h ** (self.kernel.d + 1)
        return vals[0] if y.ndim == 1 else vals

    @property
    def sup_value(self) -> float:
        """Supremum of the window, ``h^-d`` times the kernel's peak."""
        return self.kernel.peak / self.h ** self.kernel.d

    def mass_against(self, candidate: "LogQuadratic") -> float:
        """Integral of window times candidate, possibly ``inf``.

        Finiteness depends on the candidate's quadratic coefficient
        relative to the kernel's tilt capacity.
        """
        if not np.allclose(candidate.center, self.center):
            raise ValueError(
                "candidate and window must be centered at the same point")
        scaled = Jet(candidate.coeffs.value,
                     self.h * candidate.coeffs.vector,
                     self.h ** 2 * candidate.coeffs.matrix)
        return loglik.model_mass(scaled, self.kernel)


@dataclass(frozen=True)
class LogQuadratic:
    """Candidate of the form ``exp(c + b.(y-x) + (y-x).A.(y-x)/2)``.

    Parameters
    ----------
    coeffs : Jet
        The triple (c, b, A).
    center : ndarray of shape (d,)
        The expansion point x.
    """

    coeffs: Jet
    center: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "center", np.asarray(self.center, dtype=float))
        if self.center.shape != (self.coeffs.dim,):
            raise ValueError("center must match the coefficient dimension")

    def log_at(self, y):
        """Log of the candidate at ``y`` (vectorized)."""
        y = np.asarray(y, dtype=float)
        offsets = np.atleast_2d(y) - self.center
        vals = self.coeffs.poly_at(offsets)
        return float(vals[0]) if y.ndim == 1 else vals

    def log_gradient_at(self, y):
        """Gradient of the log-candidate, shape (d,) or (m, d)."""
        y = np.asarray(y, dtype=float)
        offsets = np.atleast_2d(y) - self.center
        vals = self.coeffs.vector[None, :] + offsets @ self.coeffs.matrix
        return vals[0] if y.ndim == 1 else vals

    @property
    def log_laplacian(self) -> float:
        """Laplacian of the log-candidate (constant in y)."""
        return float(np.trace(self.coeffs.matrix))


def _xlogx(w):
    """``w * log w`` with the continuous extension 0 at w = 0."""
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    pos = w > 0.0
    out[pos] = w[pos] * np.log(w[pos])
    return out


def _wlog(w, logvals):
    """``w * logvals`` treating w = 0 as exactly 0 regardless of logvals."""
    w = np.asarray(w, dtype=float)
    return np.where(w > 0.0, w * logvals, 0.0)


# Each score is split into a y-dependent part that vanishes wherever the
# window does, plus a candidate-dependent constant.  Point evaluations
# and expectations share these splits.


def _split_localized(candidate, window):
    mass = window.mass_against(candidate)
    if not (0.0 < mass < math.inf):
        return None, math.inf
    log_mass = math.log(mass)

    def pointwise(y):
        w = np.atleast_1d(window(y))
        return (_wlog(w, log_mass - candidate.log_at(y)) - _xlogx(w))

    return pointwise, 0.0


def _split_sq(candidate, window):
    mass = window.mass_against(candidate)
    if not (0.0 < mass < math.inf):
        return None, math.inf
    shift = math.log(window.sup_value) - 1.0 - math.log(mass)

    def pointwise(y):
        return np.atleast_1d(window(y)) * shift

    return pointwise, mass


def _split_strict(candidate, window, reduced=False):
    mass = window.mass_against(candidate)
    if not (0.0 < mass < math.inf):
        return None, math.inf
    log_sup = math.log(window.sup_value)

    def pointwise(y):
        w = np.atleast_1d(window(y))
        out = -_wlog(w, candidate.log_at(y))
        if not reduced:
            # subtract w * (1 + log(w / sup w)) term by term
            out = out - w - _xlogx(w) + _wlog(w, log_sup)
        return out

    return pointwise, mass


def _split_hyvarinen(candidate, window):
    trace = candidate.log_laplacian

    def pointwise(y):
        y2 = np.atleast_2d(np.asarray(y, dtype=float))
        w = np.atleast_1d(window(y2))
        grads = candidate.log_gradient_at(y2)
        sq = 0.5 * np.einsum("mi,mi->m", grads, grads)
        cross = np.einsum("mi,mi->m", np.atleast_2d(window.grad(y2)), grads)
        return w * (sq + trace) + cross

    return pointwise, 0.0


def _evaluate(split, candidate, window, y, **kw):
    pointwise, offset = split(candidate, window, **kw)
    if pointwise is None:
        return math.inf
    return float(pointwise(np.atleast_2d(np.asarray(y, dtype=float)))[0]
                 + offset)


def localized_log_score(candidate, y, window):
    """Log score confined to the window.

    Evaluates ``-w(y) log g(y) + w(y) log(int w g) - w(y) log w(y)``,
    which depends on the candidate ``g`` only through its shape on the
    window's support: rescaling ``g`` leaves the score unchanged.
    Returns ``+inf`` when the candidate's mass against the window is not
    a positive finite number.
    """
    return _evaluate(_split_localized, candidate, window, y)


def sq_score(candidate, y, window):
    """Binary-score augmentation restoring sensitivity to scale.

    Evaluates ``-w(y) log(int w g) + int w g + w(y)(log sup(w) - 1)``.
    Added to :func:`localized_log_score` this gives the strictly proper
    :func:`strict_log_score`.
    """
    return _evaluate(_split_sq, candidate, window, y)


def strict_log_score(candidate, y, window, reduced=False):
    """Strictly proper localized log score.

    The full form is ``-w(y) log g(y) + int w g - w(y)(1 +
    log(w(y)/sup w))``.  With ``reduced=True`` the candidate-independent
    terms are dropped, leaving ``-w(y) log g(y) + int w g``; both forms
    rank candidates identically, and the reduced form averaged over data
    is the local likelihood objective.
    """
    return _evaluate(_split_strict, candidate, window, y, reduced=reduced)


def weighted_hyvarinen_score(candidate, y, window):
    """Score-matching rule weighted by the window.

    Evaluates ``w(y) (|D log g(y)|^2 / 2 + lap log g(y)) +
    Dw(y) . D log g(y)``; the window-gradient term is what integration
    by parts produces when localizing, so the expectation under the
    truth is minimized by candidates proportional to it on the window.
    Never needs the candidate's mass, hence works for candidates whose
    normalization diverges.

    Raises
    ------
    UnsupportedKernelError
        If the window's kernel has no analytic gradient.
    """
    window.grad(window.center)  # fail fast on non-differentiable kernels
    return _evaluate(_split_hyvarinen, candidate, window, y)


_SPLITTERS = {
    localized_log_score: _split_localized,
    sq_score: _split_sq,
    strict_log_score: _split_strict,
    weighted_hyvarinen_score: _split_hyvarinen,
}


def expected_score(score, candidate, window, density, rtol=1e-9, **score_kw):
    """Expectation of a score under a sampling density.

    Integrates the window-supported part of the score against the
    density over the window's effective support and adds the
    candidate-dependent constant.

    Parameters
    ----------
    score : callable
        One of this module's score functions.
    candidate : LogQuadratic
    window : KernelWindow
    density : callable or object with a vectorized ``pdf``
    rtol : float, optional
    **score_kw
        Extra keyword arguments for the score (e.g. ``reduced``).

    Returns
    -------
    float
        Possibly ``inf`` for infeasible candidates.
    """
    try:
        split = _SPLITTERS[score]
    except (KeyError, TypeError):
        raise ValueError(
            "score must be one of the scoring functions of this module"
        ) from None
    pointwise, offset = split(candidate, window, **score_kw)
    if pointwise is None:
        return math.inf
    pdf = getattr(density, "pdf", density)
    kernel = window.kernel
    radius = window.h * kernel.truncation_radius()
    center = window.center

    def integrand(z):
        y = center[None, :] + z
        return (pointwise(y) * np.asarray(pdf(y), dtype=float))[:, None]

    if kernel.spherical and np.isfinite(kernel.support_radius):
        val = ball_integrate(integrand, kernel.d, radius,
                             rtol=rtol, atol=1e-13)[0]
    else:
        val = box_integrate(integrand, kernel.d, radius,
                            rtol=rtol, atol=1e-13)[0]
    return float(val + offset)
