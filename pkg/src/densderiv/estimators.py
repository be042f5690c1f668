"""User-facing estimator classes in the fit/predict idiom.

The low-level modules expose one function per estimation paradigm; this
module wraps them behind two scikit-learn style classes.
:class:`DerivativeEstimator` evaluates density (or log-density) values,
gradients and Hessians at query points.  :class:`ModeSeeker` runs
gradient ascent on the estimated log-density from given start points and
clusters the limits into modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import hyvarinen, kde, loglik, moment_matching
from .errors import EstimationError
from .kernels import Kernel, kernel_by_name
from .local_moments import as_dataset
from .results import Estimate, to_density_scale, to_log_scale

PARADIGMS = ("M", "M3", "K", "L", "H")


def estimate_at(paradigm, data, x, kernel, h):
    """Evaluate one estimation paradigm at a single query point.

    Parameters
    ----------
    paradigm : str
        One of ``"M"`` (moment matching), ``"M3"`` (moment matching with
        the bias-reduced gradient weights), ``"K"`` (kernel density plus
        kernel derivatives), ``"L"`` (local likelihood fit of an
        exponential-quadratic model) or ``"H"`` (local score matching).
    data : array-like of shape (n, d)
    x : array-like of shape (d,)
    kernel : Kernel
    h : float

    Returns
    -------
    Estimate
        Density-scale for M / M3 / K, log-scale for L / H.
    """
    if paradigm == "M":
        return moment_matching.estimate(data, x, kernel, h)
    if paradigm == "M3":
        return moment_matching.estimate(data, x, kernel, h, refined=True)
    if paradigm == "K":
        return kde.estimate(data, x, kernel, h)
    if paradigm == "L":
        return loglik.estimate(data, x, kernel, h)
    if paradigm == "H":
        return hyvarinen.estimate(data, x, kernel, h)
    raise ValueError(
        f"unknown paradigm {paradigm!r}; expected one of {PARADIGMS}")


def _resolve_kernel(kernel, d):
    if isinstance(kernel, Kernel):
        if kernel.d != d:
            raise ValueError(
                f"kernel is {kernel.d}-dimensional but data has {d} columns")
        return kernel
    return kernel_by_name(kernel, d)


class DerivativeEstimator(BaseEstimator):
    """Density and log-density derivative estimates at query points.

    Parameters
    ----------
    paradigm : str, default="M"
        See :func:`estimate_at`.
    kernel : str or Kernel, default="gaussian"
        Kernel name (instantiated at fit time with the data dimension) or
        a ready-made kernel whose dimension must match the data.
    bandwidth : float, default=0.3
    scale : str or None, default=None
        Report scale: ``"density"``, ``"log"``, or None for the
        paradigm's native scale.  Requesting a non-native scale converts
        each estimate through the chain rule, which can fail pointwise
        (e.g. log of a nonpositive density estimate).

    Examples
    --------
    >>> rng = np.random.default_rng(0)
    >>> X = rng.standard_normal((500, 2))
    >>> est = DerivativeEstimator(paradigm="K", bandwidth=0.6).fit(X)
    >>> est.predict([[0.0, 0.0]]).shape
    (1,)
    """

    def __init__(self, paradigm="M", kernel="gaussian", bandwidth=0.3,
                 scale=None):
        self.paradigm = paradigm
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.scale = scale

    def fit(self, X, y=None):
        """Store the sample and resolve the kernel.

        All real work happens lazily at query time; the estimators are
        memory-based.
        """
        if self.paradigm not in PARADIGMS:
            raise ValueError(
                f"unknown paradigm {self.paradigm!r}; "
                f"expected one of {PARADIGMS}")
        if self.scale not in (None, "density", "log"):
            raise ValueError("scale must be None, 'density' or 'log'")
        if not (float(self.bandwidth) > 0):
            raise ValueError("bandwidth must be positive")
        X = as_dataset(X)
        self.X_ = X
        self.n_features_in_ = X.shape[1]
        self.kernel_ = _resolve_kernel(self.kernel, X.shape[1])
        return self

    def _check_fitted(self):
        if not hasattr(self, "X_"):
            raise NotFittedError(
                "this DerivativeEstimator is not fitted yet; call 'fit' first")

    def estimate_at(self, x) -> Estimate:
        """Full estimate (value, gradient, Hessian, flags) at one point."""
        self._check_fitted()
        est = estimate_at(self.paradigm, self.X_, x, self.kernel_,
                          float(self.bandwidth))
        if self.scale is None or self.scale == est.scale:
            return est
        if self.scale == "log":
            return to_log_scale(est)
        return to_density_scale(est)

    def _batch(self, X):
        X = as_dataset(X, self.n_features_in_)
        return [self.estimate_at(x) for x in X]

    def predict(self, X):
        """Estimated (log-)density values, shape (n_queries,)."""
        self._check_fitted()
        return np.array([e.value for e in self._batch(X)])

    def gradients(self, X):
        """Estimated gradients, shape (n_queries, d)."""
        self._check_fitted()
        return np.stack([e.gradient for e in self._batch(X)])

    def hessians(self, X):
        """Estimated Hessians, shape (n_queries, d, d)."""
        self._check_fitted()
        return np.stack([e.hessian for e in self._batch(X)])

    def score_samples(self, X):
        """Log-density values regardless of the configured scale."""
        self._check_fitted()
        out = []
        for x in as_dataset(X, self.n_features_in_):
            est = estimate_at(self.paradigm, self.X_, x, self.kernel_,
                              float(self.bandwidth))
            out.append(to_log_scale(est).value)
        return np.array(out)


@dataclass
class ModeSearchResult:
    """Outcome of a gradient-ascent mode search.

    Attributes
    ----------
    modes : ndarray of shape (m, d)
        One representative location per cluster of converged endpoints,
        ordered by decreasing estimated log-density.
    log_values : ndarray of shape (m,)
        Estimated log-density at each mode.
    negative_definite : ndarray of bool, shape (m,)
        Whether the estimated Hessian at the mode is negative definite.
    labels : ndarray of int, shape (n_starts,)
        Cluster index per start point; -1 for non-converged starts.
    converged : ndarray of bool, shape (n_starts,)
    iterations : ndarray of int, shape (n_starts,)
    """

    modes: np.ndarray
    log_values: np.ndarray
    negative_definite: np.ndarray
    labels: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


class ModeSeeker(BaseEstimator):
    """Mode finding by ascent on the estimated log-density.

    From each start point, iterates ``x <- x + step * grad`` where
    ``grad`` is the estimated log-density gradient, with backtracking on
    the estimated log-density and an initial step of ``bandwidth**2``
    (for the Gaussian kernel density estimate this first candidate is the
    classical mean-shift update).  Endpoints closer than one bandwidth
    are merged by single linkage; each cluster reports its highest point.

    Working on the log scale makes the trajectories invariant under
    rescaling the density, and near a mode the log-density is closer to
    quadratic than the density itself.

    Parameters
    ----------
    paradigm : str, default="L"
        Any paradigm that estimates both a value and a gradient; ``"H"``
        is rejected because backtracking needs function values.
    kernel : str or Kernel, default="gaussian"
    bandwidth : float, default=0.3
    tol : float, default=1e-6
        Stop when the estimated log-gradient norm falls below this.
    max_iter : int, default=500
    """

    def __init__(self, paradigm="L", kernel="gaussian", bandwidth=0.3,
                 tol=1e-6, max_iter=500):
        self.paradigm = paradigm
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        if self.paradigm == "H":
            raise ValueError(
                "score matching provides no function value to ascend on; "
                "choose a paradigm with a value estimate")
        if self.paradigm not in PARADIGMS:
            raise ValueError(
                f"unknown paradigm {self.paradigm!r}; "
                f"expected one of {PARADIGMS}")
        X = as_dataset(X)
        self.X_ = X
        self.n_features_in_ = X.shape[1]
        self.kernel_ = _resolve_kernel(self.kernel, X.shape[1])
        return self

    def _log_estimate(self, x):
        est = estimate_at(self.paradigm, self.X_, x, self.kernel_,
                          float(self.bandwidth))
        return to_log_scale(est)

    def _ascend(self, start):
        """Run one ascent; returns (endpoint, converged, iterations)."""
        x = np.asarray(start, dtype=float).copy()
        h = float(self.bandwidth)
        try:
            current = self._log_estimate(x)
        except EstimationError:
            return x, False, 0
        for it in range(int(self.max_iter)):
            grad = current.gradient
            if float(np.linalg.norm(grad)) < self.tol:
                return x, True, it
            step = h * h
            moved = False
            while step > 1e-12 * h * h:
                candidate = x + step * grad
                try:
                    nxt = self._log_estimate(candidate)
                except EstimationError:
                    step *= 0.5
                    continue
                if nxt.value > current.value:
                    x, current, moved = candidate, nxt, True
                    break
                step *= 0.5
            if not moved:
                # no uphill step exists at this resolution; treat the
                # point as a numerical stationary point
                return x, True, it + 1
        return x, False, int(self.max_iter)

    def find_modes(self, starts) -> ModeSearchResult:
        """Ascend from each start point and cluster the endpoints."""
        if not hasattr(self, "X_"):
            raise NotFittedError(
                "this ModeSeeker is not fitted yet; call 'fit' first")
        starts = as_dataset(starts, self.n_features_in_)
        n = starts.shape[0]
        ends = np.empty_like(starts)
        converged = np.zeros(n, dtype=bool)
        iterations = np.zeros(n, dtype=int)
        for i, s in enumerate(starts):
            ends[i], converged[i], iterations[i] = self._ascend(s)

        labels = np.full(n, -1, dtype=int)
        groups = _single_linkage(ends[converged], float(self.bandwidth))
        idx = np.flatnonzero(converged)

        reps, values, negdef = [], [], []
        order = []
        for gi, members in enumerate(groups):
            best, best_val, best_est = None, -np.inf, None
            for m in members:
                try:
                    est = self._log_estimate(ends[idx[m]])
                except EstimationError:
                    continue
                if est.value > best_val:
                    best, best_val, best_est = idx[m], est.value, est
            if best is None:
                # estimates vanished at every endpoint of the cluster
                for m in members:
                    converged[idx[m]] = False
                continue
            for m in members:
                labels[idx[m]] = len(reps)
            reps.append(ends[best])
            values.append(best_val)
            eigs = np.linalg.eigvalsh(best_est.hessian)
            negdef.append(bool(eigs[-1] < 0.0))
            order.append(gi)

        reps = np.array(reps) if reps else np.empty((0, starts.shape[1]))
        values = np.array(values)
        negdef = np.array(negdef, dtype=bool)
        # report modes from highest to lowest, relabeling accordingly
        if len(values):
            perm = np.argsort(-values, kind="stable")
            inverse = np.empty_like(perm)
            inverse[perm] = np.arange(len(perm))
            relabeled = np.where(labels >= 0, inverse[np.maximum(labels, 0)],
                                 -1)
            return ModeSearchResult(reps[perm], values[perm], negdef[perm],
                                    relabeled, converged, iterations)
        return ModeSearchResult(reps, values, negdef, labels, converged,
                                iterations)


def _single_linkage(points, radius):
    """Group points whose chained pairwise distances stay within radius.

    Deterministic union-find in input order; returns a list of index
    lists (indices into ``points``).
    """
    n = len(points)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(points[i] - points[j]) <= radius:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [groups[r] for r in sorted(groups)]
