"""Derivative estimation by matching local moments.

The estimator inverts a small linear map: integrating a quadratic
polynomial ``p(z) = c + b.z + z.A.z/2`` against ``K(z) (1, z, z z^T)``
sends its coefficient triple to a moment triple, and that map depends on
the kernel only through a handful of fourth-order moments.  Applying the
inverse to the empirical local moments recovers (density, gradient,
Hessian) estimates; equivalently, each output component is a kernel sum
weighted by an explicit matching polynomial.

Both routes are implemented: :func:`estimate` goes through the operator
inverse (plus one extra weighted sum for the refined gradient), while
:func:`estimate_by_weights` evaluates the polynomial-weight form directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hspace import Jet
from .local_moments import local_terms, _mean
from .results import Estimate


def refined_coefficients(kernel):
    """Coefficients (a, b) of the refined gradient weight ``a z_j - b ||z||^2 z_j``.

    Solves the two-moment system that cancels the third-order bias term.
    Requires a spherical kernel.
    """
    if not kernel.spherical:
        raise ValueError("refined matching weights need a spherical kernel")
    d = kernel.d
    r4 = kernel.radial_moment(4)
    r6 = kernel.radial_moment(6)
    denom = r6 - r4 * r4 / d
    if denom <= 0:
        raise ValueError("kernel radial moments are degenerate")
    b = r4 / denom
    a = 1.0 + b * r4 / d
    return a, b


@dataclass
class MomentMap:
    """Linear map from quadratic-polynomial coefficients to local moments.

    Attributes
    ----------
    d : int
    mu4 : float
        Fourth moment ``int K z_j^4``.
    mu22 : float
        Mixed moment ``int K z_j^2 z_k^2`` (any value at d = 1; it cancels).
    excess4 : float
        ``mu4 + (d-1) mu22 - d``; positive for every conditions-satisfying
        kernel, and the normalizer of all trace corrections below.
    """

    d: int
    mu4: float
    mu22: float

    @classmethod
    def from_kernel(cls, kernel):
        d = kernel.d
        mu4 = kernel.moment((4,) + (0,) * (d - 1))
        if d >= 2:
            mu22 = kernel.moment((2, 2) + (0,) * (d - 2))
        else:
            mu22 = 1.0
        return cls(d, mu4, mu22)

    @property
    def excess4(self):
        return self.mu4 + (self.d - 1) * self.mu22 - self.d

    def _entrywise_scale(self):
        # matrix of moment weights: diagonal (mu4 - mu22)/2, off-diagonal mu22
        m = np.full((self.d, self.d), self.mu22)
        np.fill_diagonal(m, 0.5 * (self.mu4 - self.mu22))
        return m

    def forward(self, jet: Jet) -> Jet:
        """Moments of the quadratic polynomial with coefficients ``jet``."""
        c, b, a = jet.value, jet.vector, jet.matrix
        tr = np.trace(a)
        mat = (c * np.eye(self.d) + a * self._entrywise_scale()
               + 0.5 * self.mu22 * tr * np.eye(self.d))
        return Jet(c + 0.5 * tr, b, mat)

    def inverse(self, jet: Jet) -> Jet:
        """Coefficient triple whose moments equal ``jet``."""
        eta = self.excess4
        if eta <= 0:
            raise ValueError("kernel fourth moments admit no inverse map")
        c, b, a = jet.value, jet.vector, jet.matrix
        centered = a - c * np.eye(self.d)
        tr = np.trace(centered)
        mat = (centered - (self.mu22 - 1.0) / eta * tr * np.eye(self.d)) \
            / self._entrywise_scale()
        return Jet(c - tr / eta, b, mat)


def matching_weights(kernel, z, refined=False):
    """Evaluate the dual polynomial weights at standardized offsets.

    Parameters
    ----------
    kernel : Kernel
    z : ndarray of shape (n, d)
    refined : bool, optional
        Use the bias-reduced gradient weights (spherical kernels only).

    Returns
    -------
    w0 : ndarray of shape (n,)
        Weight reproducing the density value.
    wg : ndarray of shape (n, d)
        Weights reproducing the (bandwidth-scaled) gradient.
    wh : ndarray of shape (n, d, d)
        Weights reproducing the (bandwidth-scaled) Hessian.
    """
    mm = MomentMap.from_kernel(kernel)
    z = np.asarray(z, dtype=float)
    n, d = z.shape
    q = np.einsum("ni,ni->n", z, z)
    eta = mm.excess4

    w0 = 1.0 - (q - d) / eta

    if refined:
        a, b = refined_coefficients(kernel)
        wg = (a - b * q)[:, None] * z
    else:
        wg = z.copy()

    wh = np.empty((n, d, d))
    diag_scale = 2.0 / (mm.mu4 - mm.mu22)
    trace_part = (mm.mu22 - 1.0) / eta * (q - d)
    for j in range(d):
        wh[:, j, j] = diag_scale * (z[:, j] ** 2 - 1.0 - trace_part)
        for k in range(j + 1, d):
            wh[:, j, k] = wh[:, k, j] = z[:, j] * z[:, k] / mm.mu22
    return w0, wg, wh


def estimate_from_moments(triple, kernel, h, refined_vector=None):
    """Turn a local moment triple into (density, gradient, Hessian).

    Shared back end for the data route and the deterministic quadrature
    route: applies the inverse moment map and rescales by bandwidth
    powers.

    Parameters
    ----------
    triple : Jet
        Kernel-weighted (1, z, z z^T) moments.
    kernel : Kernel
    h : float
    refined_vector : ndarray of shape (d,), optional
        Moment of the refined gradient weights; replaces the plain
        gradient component when given.

    Returns
    -------
    Estimate
        Density-scale result.  The value can be negative in thin regions;
        that is reported, not clipped, via the ``nonpositive_value`` flag.
    """
    mm = MomentMap.from_kernel(kernel)
    coefs = mm.inverse(triple)
    if refined_vector is None:
        grad = coefs.vector / h
    else:
        grad = np.asarray(refined_vector, dtype=float) / h
    flags = ("nonpositive_value",) if coefs.value <= 0.0 else ()
    return Estimate(coefs.value, grad, coefs.matrix / h ** 2, "density", flags)


def estimate(data, x, kernel, h, refined=False):
    """Estimate (density, gradient, Hessian) at ``x`` by moment matching.

    Parameters
    ----------
    data : array-like of shape (n, d)
    x : array-like of shape (d,)
    kernel : Kernel
        Must satisfy the moment conditions for the estimates to be
        consistent; this is not re-checked per call.
    h : float
    refined : bool, optional
        Swap the gradient weights for the third-order-bias-free variant
        (spherical kernels only).  Value and Hessian are unchanged.

    Returns
    -------
    Estimate
        Density-scale result.  The value can be negative in thin regions;
        that is reported, not clipped, via the ``nonpositive_value`` flag.
    """
    if refined:
        a, b = refined_coefficients(kernel)
    w, z, n = local_terms(data, x, kernel, h)
    d = kernel.d

    value = _mean(w, n)
    vector = np.array([_mean(w * z[:, j], n) for j in range(d)])
    mat = np.zeros((d, d))
    for j in range(d):
        wj = w * z[:, j]
        for k in range(j, d):
            mat[j, k] = _mean(wj * z[:, k], n)

    refined_vector = None
    if refined:
        q = np.einsum("ni,ni->n", z, z)
        wq = w * (a - b * q)
        refined_vector = np.array([_mean(wq * z[:, j], n) for j in range(d)])

    return estimate_from_moments(
        Jet(value, vector, mat), kernel, h, refined_vector)


def estimate_by_weights(data, x, kernel, h, refined=False):
    """Same estimator via explicit polynomial weights (independent route)."""
    w, z, n = local_terms(data, x, kernel, h)
    d = kernel.d
    w0, wg, wh = matching_weights(kernel, z, refined=refined)
    value = _mean(w * w0, n)
    grad = np.array([_mean(w * wg[:, j], n) for j in range(d)]) / h
    hess = np.zeros((d, d))
    for j in range(d):
        for k in range(j, d):
            hess[j, k] = hess[k, j] = _mean(w * wh[:, j, k], n) / h ** 2
    flags = ("nonpositive_value",) if value <= 0.0 else ()
    return Estimate(value, grad, hess, "density", flags)
