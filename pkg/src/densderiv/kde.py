"""Plug-in derivative estimation: differentiate the kernel, not the fit.

The density estimate is the usual kernel average; gradient and Hessian
estimates replace the kernel by its analytic derivatives with the
matching bandwidth powers.  Requires a twice continuously differentiable
kernel; kernels without analytic derivatives are rejected.
"""

from __future__ import annotations

import numpy as np

from .errors import UnsupportedKernelError
from .local_moments import local_terms, _mean
from .results import Estimate


def estimate(data, x, kernel, h):
    """Estimate (density, gradient, Hessian) at ``x`` from kernel derivatives.

    Parameters
    ----------
    data : array-like of shape (n, d)
    x : array-like of shape (d,)
    kernel : Kernel
        Must implement analytic ``grad`` and ``hess``.
    h : float

    Returns
    -------
    Estimate
        Density-scale result.  The value is nonnegative by construction.
    """
    if not kernel.differentiable:
        raise UnsupportedKernelError(
            f"{kernel.name} kernel has no analytic derivatives; "
            "the plug-in derivative estimator needs them")
    w, z, n = local_terms(data, x, kernel, h)
    d = kernel.d

    value = _mean(w, n)

    grads = kernel.grad(z)
    grad = -np.array([_mean(grads[:, j], n) for j in range(d)]) / h ** (d + 1)

    hesses = kernel.hess(z)
    hess = np.zeros((d, d))
    for j in range(d):
        for k in range(j, d):
            hess[j, k] = hess[k, j] = _mean(hesses[:, j, k], n) / h ** (d + 2)

    return Estimate(value, grad, hess, "density")
