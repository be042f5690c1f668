"""Local exponential-quadratic likelihood fits.

The density near the query point is modeled as
``exp(c + b . z + z . A z / 2)`` in standardized offsets ``z = (y - x)/h``,
and the coefficients are chosen so that the model reproduces the observed
kernel-weighted moments of ``(1, z, z z^T)``.  Reproducing those moments is
the stationarity condition of a kernel-localized likelihood, and the
fitting problem is smooth and convex in the coefficients.

With the Gaussian kernel the fit has a closed form in terms of the local
mean and covariance.  Other kernels go through a damped Newton iteration
on the moment equations; they must have compact support so that the model
mass is computable.  Fitted coefficients convert to log-density estimates
by undoing the offset standardization: the constant estimates ``log f``,
the linear part over ``h`` estimates its gradient, and the quadratic part
over ``h^2`` its Hessian.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

from .errors import (DegenerateNeighborhoodError, InfeasibleTripleError,
                     SingularCovarianceError, SolverError,
                     UnsupportedKernelError)
from .hspace import Jet, coord_count
from .kernels import GaussianKernel
from .local_moments import moment_triple
from .quadrature import domain_integrate, jet_integral
from .results import Estimate

#: Keep fitted tilts this far inside the kernel's integrability limit.
TILT_MARGIN = 1e-6

#: Cap on model exponents during line searches, to keep rejected trial
#: coefficients from overflowing the quadrature instead of just scoring badly.
EXP_CAP = 300.0


def local_mean_cov(triple):
    """Split a moment triple into mass, local mean and local covariance.

    Parameters
    ----------
    triple : Jet
        Kernel-weighted averages of ``(1, z, z z^T)``.

    Returns
    -------
    mass : float
    mean : ndarray of shape (d,)
    cov : ndarray of shape (d, d)

    Raises
    ------
    DegenerateNeighborhoodError
        If the mass is not strictly positive.
    """
    s = triple.value
    if not (s > 0.0):
        raise DegenerateNeighborhoodError(
            f"local mass {s:.6g} is not positive; no fit is possible")
    mean = triple.vector / s
    cov = triple.matrix / s - np.outer(mean, mean)
    return s, mean, cov


def _checked_inverse(cov):
    """Inverse and log-determinant of an SPD matrix, with a singularity gate."""
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] <= 0.0 or vals[0] <= 1e-12 * vals[-1]:
        raise SingularCovarianceError(float(vals[0]))
    inv = (vecs / vals) @ vecs.T
    return inv, float(np.sum(np.log(vals)))


def gaussian_model(triple):
    """Closed-form model coefficients for the Gaussian kernel.

    The fitted model is the Gaussian with the local mean and covariance, so
    the coefficients follow from completing the square.

    Parameters
    ----------
    triple : Jet

    Returns
    -------
    Jet
        Coefficients ``(c, b, A)`` of the fitted log-quadratic.
    """
    s, mean, cov = local_mean_cov(triple)
    inv, logdet = _checked_inverse(cov)
    c = math.log(s) - 0.5 * logdet - 0.5 * float(mean @ inv @ mean)
    return Jet(c, inv @ mean, np.eye(triple.dim) - inv)


def _gaussian_tilt(theta):
    """Mean, covariance and mass of the Gaussian-kernel model measure."""
    d = theta.dim
    lam, vecs = np.linalg.eigh(np.eye(d) - theta.matrix)
    if lam[0] <= 0.0:
        raise ValueError("tilt exceeds the Gaussian integrability limit")
    beta = vecs.T @ theta.vector
    mean = vecs @ (beta / lam)
    cov = (vecs / lam) @ vecs.T
    expo = theta.value + 0.5 * float(beta @ (beta / lam)) \
        - 0.5 * float(np.sum(np.log(lam)))
    with np.errstate(over="ignore"):
        mass = float(np.exp(expo))
    return mass, mean, cov


def model_moments(theta, kernel, rtol=1e-11):
    """Moment triple ``int K(z) exp(model(z)) (1, z, z z^T) dz`` of the model.

    Closed form for the Gaussian kernel, adaptive quadrature for compactly
    supported kernels.

    Raises
    ------
    UnsupportedKernelError
        For non-Gaussian kernels with unbounded support.
    """
    if isinstance(kernel, GaussianKernel):
        m0, mean, cov = _gaussian_tilt(theta)
        return Jet(m0, m0 * mean, m0 * (cov + np.outer(mean, mean)))
    _require_compact(kernel)

    def weight(z):
        return kernel(z) * np.exp(np.minimum(theta.poly_at(z), EXP_CAP))

    return jet_integral(weight, theta.dim, kernel.truncation_radius(),
                        rtol=rtol, atol=_mass_atol(theta), kernel=kernel)


def model_moments_direction(theta, direction, kernel, rtol=1e-11):
    """Directional derivative of :func:`model_moments` in ``direction``.

    The derivative weights the model measure by the quadratic polynomial of
    ``direction``; for the Gaussian kernel the three blocks reduce to
    Gaussian expectations of that polynomial times ``(1, z, z z^T)``.
    """
    if isinstance(kernel, GaussianKernel):
        m0, mean, cov = _gaussian_tilt(theta)
        bmat = direction.matrix
        avg = direction.value + float(direction.vector @ mean) \
            + 0.5 * (float(np.tensordot(bmat, cov))
                     + float(mean @ bmat @ mean))
        dmean = cov @ (direction.vector + bmat @ mean)
        second = (avg * (cov + np.outer(mean, mean))
                  + np.outer(dmean, mean) + np.outer(mean, dmean)
                  + cov @ bmat @ cov)
        return Jet(m0 * avg, m0 * (avg * mean + dmean), m0 * second)
    _require_compact(kernel)

    def weight(z):
        w = kernel(z) * np.exp(np.minimum(theta.poly_at(z), EXP_CAP))
        return w * direction.poly_at(z)

    return jet_integral(weight, theta.dim, kernel.truncation_radius(),
                        rtol=rtol, atol=_mass_atol(theta), kernel=kernel)


def model_mass(theta, kernel, rtol=1e-10):
    """Total mass ``int K(z) exp(model(z)) dz``; ``inf`` if the tilt diverges."""
    top = float(np.linalg.eigvalsh(theta.matrix)[-1])
    if top >= kernel.tilt_limit:
        return np.inf
    if isinstance(kernel, GaussianKernel):
        return _gaussian_tilt(theta)[0]
    _require_compact(kernel)

    def integrand(z):
        w = kernel(z) * np.exp(np.minimum(theta.poly_at(z), EXP_CAP))
        return w[:, None]

    val = domain_integrate(integrand, kernel,
                           rtol=rtol, atol=_mass_atol(theta))
    return float(val[0])


def objective(theta, triple, kernel):
    """Convex fitting objective whose gradient is the moment mismatch."""
    return model_mass(theta, kernel) - triple.inner(theta)


def _require_compact(kernel):
    if not np.isfinite(kernel.support_radius):
        raise UnsupportedKernelError(
            f"{kernel.name} kernel has unbounded support and no closed-form "
            "tilt; the likelihood fit needs one or the other")


def _mass_atol(theta):
    # absolute floor for odd components that integrate to ~0; tied to the
    # overall e^c scale of the model so tiny densities stay resolvable
    return 1e-13 * math.exp(min(theta.value, EXP_CAP))


def _safe_mass(theta, kernel):
    try:
        return model_mass(theta, kernel)
    except RuntimeError:
        return np.inf


def _project(theta, kernel, margin=TILT_MARGIN):
    """Pull the quadratic part inside the kernel's tilt limit."""
    limit = kernel.tilt_limit
    if not np.isfinite(limit):
        return theta
    lam, vecs = np.linalg.eigh(theta.matrix)
    cap = limit - margin
    if lam[-1] <= cap:
        return theta
    lam = np.minimum(lam, cap)
    return Jet(theta.value, theta.vector, (vecs * lam) @ vecs.T)


def _quadratic_max_on_ball(b, A, radius):
    """Maximum of ``b . z + z . A z / 2`` over the ball ``||z|| <= radius``.

    Standard trust-region subproblem, solved in the eigenbasis of ``A``
    (including the degenerate case where ``b`` has no component along the
    top eigenspace).
    """
    lam, vecs = np.linalg.eigh(np.asarray(A, dtype=float))
    beta = vecs.T @ np.asarray(b, dtype=float)
    top = float(lam[-1])
    best = -np.inf
    if top < 0.0:
        y = -beta / lam
        if float(np.sqrt(np.sum(y * y))) <= radius:
            best = float(beta @ y + 0.5 * np.sum(lam * y * y))
    r2 = radius * radius
    eps = 1e-10 * max(1.0, abs(top))

    def excess(nu):
        return float(np.sum((beta / (nu - lam)) ** 2)) - r2

    lo = top + eps
    if excess(lo) > 0.0:
        hi = top + max(1.0, float(np.linalg.norm(beta)) / radius)
        while excess(hi) > 0.0:
            hi = top + 2.0 * (hi - top)
        nu = brentq(excess, lo, hi, maxiter=200)
        y = beta / (nu - lam)
    else:
        gap = (top - lam) > eps
        y = np.where(gap, beta / np.where(gap, top - lam, 1.0), 0.0)
        y[-1] += math.sqrt(max(r2 - float(np.sum(y * y)), 0.0))
    boundary = float(beta @ y + 0.5 * np.sum(lam * y * y))
    return max(best, boundary)


def _certifies_infeasible(triple, direction, kernel):
    """Check whether ``direction`` separates the triple from the moment body.

    A triple is reproducible only if, for every quadratic polynomial, its
    triple-average stays below the polynomial's maximum over the kernel
    support.  The maximum is taken over the circumscribed ball, which is
    exact for spherical supports and conservative otherwise.
    """
    if not np.isfinite(kernel.support_radius):
        return False
    probe = Jet(0.0, direction.vector, direction.matrix)
    size = probe.norm()
    if not (size > 0.0):
        return False
    probe = probe * (1.0 / size)
    avg = triple.inner(probe) / triple.value
    cap = _quadratic_max_on_ball(probe.vector, probe.matrix,
                                 kernel.support_radius)
    return avg >= cap - 1e-8 * (1.0 + abs(cap))


def _value_and_jacobian(theta, kernel, rtol=1e-11):
    """Model moments and their Jacobian in plain coordinates.

    For quadrature kernels both come from a single cubature call: the
    Jacobian entry ``(i, k)`` is the model measure's expectation of
    ``t_i(z) phi_k(z)``, with ``t`` the coordinate monomials of the moment
    triple and ``phi`` the polynomial of the k-th coordinate basis triple.
    """
    d = theta.dim
    basis = Jet.basis(d)
    if isinstance(kernel, GaussianKernel):
        value = model_moments(theta, kernel)
        cols = [model_moments_direction(theta, e, kernel).to_coords()
                for e in basis]
        return value, np.column_stack(cols)
    _require_compact(kernel)
    p = coord_count(d)
    iu, ju = np.triu_indices(d)
    half = np.where(iu == ju, 0.5, 1.0)

    def columns(z):
        n = len(z)
        w = kernel(z) * np.exp(np.minimum(theta.poly_at(z), EXP_CAP))
        quad = z[:, iu] * z[:, ju]
        t = np.concatenate([np.ones((n, 1)), z, quad], axis=1)
        phi = np.concatenate([np.ones((n, 1)), z, half * quad], axis=1)
        outer = np.einsum("n,ni,nk->nik", w, t, phi).reshape(n, p * p)
        return np.concatenate([w[:, None] * t, outer], axis=1)

    vals = domain_integrate(columns, kernel,
                            rtol=rtol, atol=_mass_atol(theta))
    return Jet.from_coords(vals[:p], d), vals[p:].reshape(p, p)


def solve_triple(triple, kernel, force_newton=False, tol=1e-9, max_iter=100):
    """Model coefficients reproducing a local moment triple.

    Parameters
    ----------
    triple : Jet
        Target kernel-weighted moments.
    kernel : Kernel
    force_newton : bool, optional
        Run the Newton iteration even when a closed form exists; used to
        cross-check the two routes.
    tol : float, optional
        Convergence threshold on the moment mismatch, relative to the
        triple's magnitude.
    max_iter : int, optional

    Returns
    -------
    Jet
        Coefficients ``(c, b, A)`` with ``model_moments`` equal to
        ``triple`` within tolerance.

    Raises
    ------
    DegenerateNeighborhoodError
        If the triple has nonpositive mass.
    SingularCovarianceError
        If the implied local covariance is numerically singular.
    InfeasibleTripleError
        If no model can reproduce the triple (certified by a separating
        direction along which the iteration escaped).
    SolverError
        If the iteration stalls without an infeasibility certificate.
    """
    s = triple.value
    if not (s > 0.0):
        raise DegenerateNeighborhoodError(
            f"local mass {s:.6g} is not positive; no fit is possible")
    if isinstance(kernel, GaussianKernel):
        closed = gaussian_model(triple)
        if not force_newton:
            return closed
    d = triple.dim
    mass0 = kernel.moment((0,) * d)
    theta = Jet(math.log(s / mass0), np.zeros(d), np.zeros((d, d)))
    scale = triple.norm()
    residual = np.inf
    mismatch = None
    escape = None
    for _ in range(max_iter):
        try:
            value, jac = _value_and_jacobian(theta, kernel)
        except RuntimeError:
            # quadrature gives up once the tilt concentrates into a spike,
            # which happens exactly when the iteration escapes toward an
            # unattainable moment; fall through to the certificate check
            break
        mismatch = triple - value
        residual = mismatch.norm()
        if residual <= tol * scale:
            return theta
        rhs = mismatch.to_coords()
        try:
            step = Jet.from_coords(np.linalg.solve(jac, rhs), d)
        except np.linalg.LinAlgError:
            step = Jet.from_coords(
                np.linalg.lstsq(jac, rhs, rcond=None)[0], d)
        slope = mismatch.inner(step)
        if not (slope > 0.0):
            step, slope = mismatch, mismatch.inner(mismatch)
        escape = step
        current = value.value - triple.inner(theta)
        stride = 1.0
        moved = False
        while stride > 1e-13:
            candidate = _project(theta + stride * step, kernel)
            trial = _safe_mass(candidate, kernel) - triple.inner(candidate)
            if trial <= current - 1e-4 * stride * slope:
                theta = candidate
                moved = True
                break
            stride *= 0.5
        if not moved:
            break
    for direction in (escape, mismatch):
        if direction is not None and _certifies_infeasible(
                triple, direction, kernel):
            raise InfeasibleTripleError(
                "no exponential-quadratic model reproduces these moments; "
                "a separating direction certifies the triple lies outside "
                "the kernel's moment body")
    raise SolverError(residual)


def estimate(data, x, kernel, h, force_newton=False, tol=1e-9, max_iter=100):
    """Log-density value, gradient and Hessian from the local model fit.

    Parameters
    ----------
    data : array-like of shape (n, d)
    x : array-like of shape (d,)
    kernel : Kernel
    h : float
    force_newton : bool, optional
        Bypass the Gaussian closed form and iterate; for cross-checks.

    Returns
    -------
    Estimate
        Log-scale result.
    """
    triple = moment_triple(data, x, kernel, h)
    theta = solve_triple(triple, kernel, force_newton=force_newton,
                         tol=tol, max_iter=max_iter)
    return Estimate(theta.value, theta.vector / h, theta.matrix / h ** 2,
                    "log")
