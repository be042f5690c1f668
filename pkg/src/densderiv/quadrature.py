"""Thin adaptive-quadrature helpers shared by the estimation modules.

Wraps scipy's vector-valued adaptive cubature behind the call shapes the
package needs: plain vector integrals over a centered box or ball and
weighted (1, z, z z^T) triples.

The ball region exists because kernels supported on a ball are
discontinuous across its boundary; integrating them over a bounding box
defeats the adaptive subdivision, while in spherical coordinates the
same integrand is smooth on a rectangle.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import cubature

from .hspace import Jet


def box_integrate(fn, d, radius, rtol=1e-10, atol=1e-14):
    """Integrate a vectorized function over the box [-radius, radius]^d.

    Parameters
    ----------
    fn : callable
        Maps points of shape (n, d) to values of shape (n, m).
    d : int
    radius : float
    rtol, atol : float, optional

    Returns
    -------
    ndarray of shape (m,)
    """
    lo = np.full(d, -float(radius))
    hi = np.full(d, float(radius))
    res = cubature(fn, lo, hi, rtol=rtol, atol=atol)
    if res.status != "converged":
        raise RuntimeError(f"cubature did not converge (status {res.status})")
    return np.atleast_1d(res.estimate)


def _spherical_points(u, d):
    """Map (radius, angles) rows to Cartesian points plus the Jacobian."""
    n = len(u)
    r = u[:, 0]
    coss = np.cos(u[:, 1:])
    sins = np.sin(u[:, 1:])
    z = np.empty((n, d))
    prefix = np.ones(n)
    for k in range(d - 1):
        z[:, k] = r * prefix * coss[:, k]
        prefix = prefix * sins[:, k]
    z[:, d - 1] = r * prefix
    jac = r ** (d - 1)
    for k in range(d - 2):
        jac = jac * sins[:, k] ** (d - 2 - k)
    return z, jac


def ball_integrate(fn, d, radius, rtol=1e-10, atol=1e-14):
    """Integrate a vectorized function over the ball ``||z|| <= radius``.

    Uses spherical coordinates, where integrands that jump only at the
    ball boundary become smooth.  Same calling convention as
    :func:`box_integrate`.
    """
    if d == 1:
        return box_integrate(fn, 1, radius, rtol=rtol, atol=atol)
    lo = np.zeros(d)
    hi = np.concatenate([[float(radius)], np.full(d - 2, math.pi),
                         [2.0 * math.pi]])

    def wrapped(u):
        z, jac = _spherical_points(u, d)
        return np.asarray(fn(z)) * jac[:, None]

    res = cubature(wrapped, lo, hi, rtol=rtol, atol=atol)
    if res.status != "converged":
        raise RuntimeError(f"cubature did not converge (status {res.status})")
    return np.atleast_1d(res.estimate)


def domain_integrate(fn, kernel, radius=None, rtol=1e-10, atol=1e-14):
    """Integrate over the kernel's effective support, picking the region.

    Spherical kernels with compact support integrate over the ball (their
    boundary jump is invisible there); everything else uses the bounding
    box.
    """
    if radius is None:
        radius = kernel.truncation_radius()
    if kernel.spherical and np.isfinite(kernel.support_radius):
        return ball_integrate(fn, kernel.d, radius, rtol=rtol, atol=atol)
    return box_integrate(fn, kernel.d, radius, rtol=rtol, atol=atol)


def jet_integral(weight_fn, d, radius, rtol=1e-10, atol=1e-14, kernel=None):
    """Integral of ``weight(z) * (1, z, z z^T)`` over the centered region.

    Parameters
    ----------
    weight_fn : callable
        Maps points (n, d) to scalar weights (n,).
    kernel : Kernel, optional
        When given, chooses between box and ball regions as in
        :func:`domain_integrate`; otherwise integrates over the box.

    Returns
    -------
    Jet
    """
    iu, ju = np.triu_indices(d)

    def columns(z):
        w = np.asarray(weight_fn(z), dtype=float)
        quad_cols = z[:, iu] * z[:, ju]
        return np.concatenate(
            [w[:, None], w[:, None] * z, w[:, None] * quad_cols], axis=1)

    if kernel is not None:
        vals = domain_integrate(columns, kernel, radius, rtol=rtol, atol=atol)
    else:
        vals = box_integrate(columns, d, radius, rtol=rtol, atol=atol)
    mat = np.zeros((d, d))
    mat[iu, ju] = vals[1 + d:]
    return Jet(vals[0], vals[1:1 + d], mat)
