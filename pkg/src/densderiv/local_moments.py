"""Kernel-weighted local sample moments.

Everything downstream consumes the same three statistics at a query point
``x`` with bandwidth ``h``: with standardized offsets ``z_i = (X_i - x)/h``
and weights ``w_i = h^-d K(z_i)``, these are the weighted averages of
``1``, ``z_i`` and ``z_i z_i^T``, collected in a :class:`~.hspace.Jet`.

Accumulation details:

* contributions are put in a canonical order (lexicographic in the
  offsets) before summation, so results are exactly invariant under
  permuting the dataset rows;
* sums run in extended precision to control the rounding amplification
  from the ``n h^-d`` scaling.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateNeighborhoodError
from .hspace import Jet
from .quadrature import jet_integral


def as_dataset(X, d=None):
    """Validate a sample array: 2-D, finite, floating point.

    Parameters
    ----------
    X : array-like of shape (n, d)
    d : int, optional
        Expected dimension; checked when given.

    Returns
    -------
    ndarray of shape (n, d)
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("data must be a nonempty (n, d) array")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite entries")
    if d is not None and X.shape[1] != d:
        raise ValueError(f"expected {d}-dimensional rows, got {X.shape[1]}")
    return X


def local_terms(data, x, kernel, h):
    """Standardized offsets and scaled weights in canonical order.

    Points outside the kernel's truncation radius are dropped before
    sorting: their weights are below the 1e-13 relative tail bound for
    every statistic this package forms, and skipping them keeps the
    canonical sort proportional to the neighborhood size rather than the
    sample size.

    Returns
    -------
    weights : ndarray of shape (m,)
        ``h^-d K((X_i - x)/h)`` for the m retained points,
        lexicographically ordered by offset.
    offsets : ndarray of shape (m, d)
        Matching standardized offsets ``(X_i - x)/h``.
    count : int
        The full sample size n, which averages must divide by.

    Raises
    ------
    DegenerateNeighborhoodError
        If no point carries positive weight.
    """
    data = as_dataset(data, kernel.d)
    x = np.asarray(x, dtype=float)
    if x.shape != (kernel.d,):
        raise ValueError(f"query point must have shape ({kernel.d},)")
    if not (h > 0):
        raise ValueError("bandwidth must be positive")
    count = data.shape[0]
    off = data - x
    radius = h * kernel.truncation_radius(tail=1e-13)
    keep = np.einsum("ni,ni->n", off, off) <= radius * radius
    off = off[keep]
    if off.shape[0] == 0:
        raise DegenerateNeighborhoodError(
            f"no point within the kernel radius of the query "
            f"(nearest offsets exceed {radius:.3g})")
    order = np.lexsort(off.T[::-1])
    z = off[order] / h
    w = kernel(z) / h ** kernel.d
    if not np.any(w > 0.0):
        raise DegenerateNeighborhoodError(
            f"all {len(w)} kernel weights vanished at the query point")
    return w, z, count


def _mean(values, n):
    return float(np.sum(values, dtype=np.longdouble) / n)


def local_moment(data, x, alpha, kernel, h):
    """Weighted average ``n^-1 sum_i w_i z_i^alpha``.

    Parameters
    ----------
    data : array-like of shape (n, d)
    x : array-like of shape (d,)
    alpha : sequence of int
        Monomial multi-index.
    kernel : Kernel
    h : float

    Returns
    -------
    float
    """
    w, z, n = local_terms(data, x, kernel, h)
    vals = w
    for j, a in enumerate(alpha):
        if a:
            vals = vals * z[:, j] ** int(a)
    return _mean(vals, n)


def moment_triple(data, x, kernel, h):
    """The (1, z, z z^T) weighted averages as a :class:`Jet`."""
    w, z, n = local_terms(data, x, kernel, h)
    d = kernel.d
    value = _mean(w, n)
    vector = np.array([_mean(w * z[:, j], n) for j in range(d)])
    mat = np.zeros((d, d))
    for j in range(d):
        wj = w * z[:, j]
        for k in range(j, d):
            mat[j, k] = _mean(wj * z[:, k], n)
    return Jet(value, vector, mat)


def normalized_moment(data, x, alpha, kernel, h):
    """Location-scale normalized local moment.

    Divides by the mass ``s = n^-1 sum w_i`` and removes one bandwidth
    factor per odd index entry, i.e. ``h^-|parity(alpha)| s^alpha / s``.
    """
    s = local_moment(data, x, (0,) * kernel.d, kernel, h)
    raw = local_moment(data, x, alpha, kernel, h)
    parity = sum(int(a) % 2 for a in alpha)
    return raw / s / h ** parity


def expected_moment_triple(pdf, x, kernel, h, rtol=1e-10):
    """Population counterpart of :func:`moment_triple` by quadrature.

    Parameters
    ----------
    pdf : callable
        Vectorized density, mapping (n, d) points to (n,) values.
    x : array-like of shape (d,)
    kernel : Kernel
    h : float
    rtol : float, optional

    Returns
    -------
    Jet
        ``int K(z) (1, z, z z^T) pdf(x + h z) dz``.
    """
    x = np.asarray(x, dtype=float)
    radius = kernel.truncation_radius()

    def weight(z):
        return kernel(z) * pdf(x[None, :] + h * z)

    return jet_integral(weight, kernel.d, radius, rtol=rtol, kernel=kernel)
