"""Local score matching for log-density derivatives.

Fits the same exponential-quadratic local model as the likelihood route,
but by minimizing a kernel-weighted Hyvarinen score.  After integrating
by parts the objective only involves the model's log-gradient
``b + A z``, so the fit never needs the model's normalizing mass: the
first-order conditions are linear.  Eliminating ``b`` leaves a matrix
equation ``(A cov + cov A) / 2 = rhs`` driven by mass-normalized
kernel-gradient averages, solved spectrally.

The constant term is not identified by score matching, so estimates carry
``value = nan``; gradient and Hessian of the log-density come from
``(b / h, A / h^2)`` exactly as in the likelihood route.  Requires a
kernel with an analytic gradient.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularCovarianceError, UnsupportedKernelError
from .local_moments import local_terms, _mean
from .results import Estimate


def _sym(mat):
    """Symmetric part ``(M + M^T) / 2``."""
    return 0.5 * (mat + mat.T)


def solve_symmetrized_product(cov, target):
    """Solve ``(X cov + cov X) / 2 = target`` for symmetric ``X``.

    Parameters
    ----------
    cov : ndarray of shape (d, d)
        Symmetric positive definite coefficient matrix.
    target : ndarray of shape (d, d)
        Right-hand side; only its symmetric part matters.

    Returns
    -------
    ndarray of shape (d, d)

    Raises
    ------
    SingularCovarianceError
        If ``cov`` is numerically singular, making the equation
        ill-posed.
    """
    cov = _sym(np.asarray(cov, dtype=float))
    target = _sym(np.asarray(target, dtype=float))
    lam, vecs = np.linalg.eigh(cov)
    if lam[0] <= 0.0 or lam[0] <= 1e-12 * lam[-1]:
        raise SingularCovarianceError(float(lam[0]))
    rotated = vecs.T @ target @ vecs
    solved = 2.0 * rotated / (lam[:, None] + lam[None, :])
    return _sym(vecs @ solved @ vecs.T)


def gradient_averages(data, x, kernel, h):
    """Local moments plus mass-normalized kernel-gradient averages.

    Returns
    -------
    mass : float
        Kernel-weighted density level ``s``.
    mean : ndarray of shape (d,)
    cov : ndarray of shape (d, d)
    q : ndarray of shape (d,)
        Average of ``grad K`` over the neighborhood, divided by the mass.
    Q : ndarray of shape (d, d)
        Average of ``grad K(z) z^T`` divided by the mass (not symmetric
        in general).
    """
    if not kernel.differentiable:
        raise UnsupportedKernelError(
            f"{kernel.name} kernel has no analytic gradient; "
            "score matching needs one")
    w, z, n = local_terms(data, x, kernel, h)
    d = kernel.d
    s = _mean(w, n)
    mean = np.array([_mean(w * z[:, j], n) for j in range(d)]) / s
    second = np.zeros((d, d))
    for j in range(d):
        wj = w * z[:, j]
        for k in range(j, d):
            second[j, k] = second[k, j] = _mean(wj * z[:, k], n) / s
    cov = second - np.outer(mean, mean)
    grads = kernel.grad(z) / h ** d
    q = np.array([_mean(grads[:, j], n) for j in range(d)]) / s
    big_q = np.empty((d, d))
    for j in range(d):
        for k in range(d):
            big_q[j, k] = _mean(grads[:, j] * z[:, k], n) / s
    return s, mean, cov, q, big_q


def estimate(data, x, kernel, h):
    """Log-density gradient and Hessian by local score matching.

    Parameters
    ----------
    data : array-like of shape (n, d)
    x : array-like of shape (d,)
    kernel : Kernel
        Must implement an analytic gradient.
    h : float

    Returns
    -------
    Estimate
        Log-scale result with ``value = nan``: the score objective does
        not see the model's constant term.
    """
    _, mean, cov, q, big_q = gradient_averages(data, x, kernel, h)
    d = kernel.d
    rhs = -np.eye(d) - _sym(big_q) + _sym(np.outer(q, mean))
    hess_coef = solve_symmetrized_product(cov, rhs)
    grad_coef = -(hess_coef @ mean) - q
    return Estimate(np.nan, grad_coef / h, hess_coef / h ** 2, "log")
