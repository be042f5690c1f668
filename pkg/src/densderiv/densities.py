"""Analytic reference densities for bias and rate studies.

Gaussian mixtures are rich enough to have interesting derivative
structure while keeping every quantity the experiments need in closed
form: gradients and Hessians of the density and its logarithm,
directional derivatives up to fourth order, and the Laplacian together
with its first two derivative arrays.  Bias measurements at the 1e-4
scale would drown in finite-differencing error, so nothing here is
differenced numerically.
"""

from __future__ import annotations

import math

import numpy as np


def _as_matrix_stack(arrs, d):
    out = np.asarray(arrs, dtype=float)
    if out.ndim == 2:
        out = out[None]
    if out.shape[-2:] != (d, d):
        raise ValueError(f"expected ({d}, {d}) covariance blocks")
    return out


class GaussianMixture:
    """Finite mixture of full-covariance Gaussians with analytic calculus.

    Parameters
    ----------
    weights : array-like of shape (k,)
        Positive, summing to one.
    means : array-like of shape (k, d)
    covariances : array-like of shape (k, d, d)
        Symmetric positive definite blocks.
    """

    def __init__(self, weights, means, covariances):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        d = self.means.shape[1]
        self.covariances = _as_matrix_stack(covariances, d)
        k = len(self.weights)
        if self.means.shape[0] != k or self.covariances.shape[0] != k:
            raise ValueError("weights, means and covariances disagree on k")
        if np.any(self.weights <= 0.0):
            raise ValueError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to one")
        self.precisions = np.stack(
            [np.linalg.inv(c) for c in self.covariances])
        self._chols = np.stack(
            [np.linalg.cholesky(c) for c in self.covariances])
        self._norms = np.array([
            (2.0 * math.pi) ** (-d / 2.0) / math.sqrt(np.linalg.det(c))
            for c in self.covariances])

    @classmethod
    def gaussian(cls, mean, covariance):
        """Single-component convenience constructor."""
        return cls([1.0], [mean], [covariance])

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    # -- evaluation ----------------------------------------------------

    def _component_values(self, x):
        """Component densities at points ``x`` of shape (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diffs = x[:, None, :] - self.means[None, :, :]
        quad = np.einsum("nki,kij,nkj->nk", diffs, self.precisions, diffs)
        return self._norms[None, :] * np.exp(-0.5 * quad)

    def pdf(self, x):
        """Density values; scalar for a single point, (n,) for a batch."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        vals = self._component_values(x) @ self.weights
        return float(vals[0]) if single else vals

    def log_pdf(self, x):
        return np.log(self.pdf(x))

    def gradient(self, x):
        """Density gradient at a single point."""
        x = np.asarray(x, dtype=float)
        phi = self.weights * self._component_values(x)[0]
        diffs = x[None, :] - self.means
        pulls = np.einsum("kij,kj->ki", self.precisions, diffs)
        return -(phi[:, None] * pulls).sum(axis=0)

    def hessian(self, x):
        """Density Hessian at a single point."""
        x = np.asarray(x, dtype=float)
        phi = self.weights * self._component_values(x)[0]
        diffs = x[None, :] - self.means
        pulls = np.einsum("kij,kj->ki", self.precisions, diffs)
        outer = np.einsum("ki,kj->kij", pulls, pulls)
        return np.einsum("k,kij->ij", phi, outer - self.precisions)

    def log_gradient(self, x):
        return self.gradient(x) / self.pdf(x)

    def log_hessian(self, x):
        f = self.pdf(x)
        g = self.gradient(x) / f
        return self.hessian(x) / f - np.outer(g, g)

    # -- directional derivatives ---------------------------------------

    def directional(self, x, z, order):
        """Derivatives ``(d/dt)^k f(x + t z)`` at ``t = 0``.

        Along a line, each component is an exponential of a quadratic in
        ``t``, so its derivatives follow the Hermite-style recursion in
        the linear and quadratic coefficients.

        Parameters
        ----------
        x : array-like of shape (d,)
        z : array-like of shape (m, d) or (d,)
            Direction vectors (not necessarily normalized).
        order : int
            Derivative order, 0 to 4.

        Returns
        -------
        ndarray of shape (m,) or scalar
        """
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        zz = z[None, :] if single else z
        phi = self.weights * self._component_values(x)[0]
        diffs = x[None, :] - self.means
        pulls = np.einsum("kij,kj->ki", self.precisions, diffs)
        lin = -np.einsum("mi,ki->mk", zz, pulls)
        quad = np.einsum("mi,kij,mj->mk", zz, self.precisions, zz)
        vals = _exp_quadratic_derivative(lin, quad, order) @ phi
        return float(vals[0]) if single else vals

    def log_directional(self, x, z, order):
        """Derivatives ``(d/dt)^k log f(x + t z)`` at ``t = 0``."""
        if order == 0:
            z = np.asarray(z, dtype=float)
            base = math.log(self.pdf(x))
            return base if z.ndim == 1 else np.full(z.shape[0], base)
        f = self.pdf(x)
        moments = [self.directional(x, z, k) / f for k in range(1, order + 1)]
        return _log_from_moments(moments, order)

    # -- Laplacian calculus (third and fourth order contractions) ------

    def laplacian(self, x):
        """Trace of the density Hessian."""
        return float(np.trace(self.hessian(x)))

    def laplacian_gradient(self, x):
        """Gradient of the Laplacian of the density."""
        x = np.asarray(x, dtype=float)
        phi = self.weights * self._component_values(x)[0]
        out = np.zeros(self.d)
        for k in range(self.n_components):
            prec = self.precisions[k]
            v = prec @ (x - self.means[k])
            base = float(v @ v - np.trace(prec))
            out += phi[k] * (-base * v + 2.0 * prec @ v)
        return out

    def laplacian_hessian(self, x):
        """Hessian of the Laplacian of the density."""
        x = np.asarray(x, dtype=float)
        phi = self.weights * self._component_values(x)[0]
        out = np.zeros((self.d, self.d))
        for k in range(self.n_components):
            prec = self.precisions[k]
            v = prec @ (x - self.means[k])
            pv = prec @ v
            base = float(v @ v - np.trace(prec))
            term = (np.outer(v, v) - prec) * base
            term -= 2.0 * (np.outer(v, pv) + np.outer(pv, v))
            term += 2.0 * prec @ prec
            out += phi[k] * term
        return out

    # -- sampling ------------------------------------------------------

    def sample(self, n, rng):
        """Draw ``n`` points using the generator ``rng``."""
        rng = np.random.default_rng(rng)
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        normals = rng.standard_normal((n, self.d))
        out = np.empty((n, self.d))
        for k in range(self.n_components):
            mask = labels == k
            out[mask] = self.means[k] + normals[mask] @ self._chols[k].T
        return out


def _exp_quadratic_derivative(lin, quad, order):
    """Derivatives of ``exp(a t - g t^2 / 2)`` at 0, given arrays a and g."""
    if order == 0:
        return np.ones_like(lin)
    if order == 1:
        return lin
    if order == 2:
        return lin ** 2 - quad
    if order == 3:
        return lin ** 3 - 3.0 * lin * quad
    if order == 4:
        return lin ** 4 - 6.0 * lin ** 2 * quad + 3.0 * quad ** 2
    raise ValueError("directional derivatives available up to order 4")


def _log_from_moments(moments, order):
    """Derivatives of log f from normalized derivatives of f.

    ``moments[k-1]`` holds the k-th derivative of ``f`` along the line
    divided by ``f``; the output is the cumulant-style combination giving
    the corresponding derivative of ``log f``.
    """
    m1 = moments[0]
    if order == 1:
        return m1
    m2 = moments[1]
    if order == 2:
        return m2 - m1 ** 2
    m3 = moments[2]
    if order == 3:
        return m3 - 3.0 * m1 * m2 + 2.0 * m1 ** 3
    m4 = moments[3]
    if order == 4:
        return (m4 - 4.0 * m1 * m3 - 3.0 * m2 ** 2
                + 12.0 * m1 ** 2 * m2 - 6.0 * m1 ** 4)
    raise ValueError("log-derivatives available up to order 4")


def experiment_stream(seed, *indices):
    """Independent, reproducible generator for one cell of an experiment.

    Builds a counter-based stream from a base seed and integer indices
    (for example replication and sample-size index), so any cell can be
    regenerated in isolation and results never depend on scheduling
    order.
    """
    ss = np.random.SeedSequence(entropy=int(seed),
                                spawn_key=tuple(int(i) for i in indices))
    return np.random.default_rng(ss)
