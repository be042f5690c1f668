"""Smoothing kernels and their moment tables.

A kernel here is a nonnegative weight function on R^d used through the
rescaling ``K_h(y) = h^-d K(y / h)``.  The estimators rely on three groups
of kernel facts, all provided by this module:

* pointwise evaluation (and, when available, analytic gradient / Hessian);
* monomial moments ``int K(z) z^alpha dz`` up to total order 8, cached per
  kernel instance;
* structural condition checks (normalization, sign/permutation symmetry,
  identity second moment, smoothness, exponential-tilt integrability).

Derivatives are analytic only: kernels that do not implement them report
themselves as non-differentiable instead of falling back to finite
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import UnsupportedKernelError

MAX_MOMENT_ORDER = 8


def _as_points(z, d):
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != d:
        raise ValueError(f"expected points of shape (n, {d})")
    return z


def _check_alpha(alpha, d):
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != d or any(a < 0 for a in alpha):
        raise ValueError(f"alpha must be {d} nonnegative integers")
    if sum(alpha) > MAX_MOMENT_ORDER:
        raise ValueError(
            f"moments are only available up to total order {MAX_MOMENT_ORDER}"
        )
    return alpha


def _double_factorial(k):
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def _sphere_surface(d):
    # surface measure of the unit sphere in R^d
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def _uniform_sphere_moment(alpha, d):
    """E[U^alpha] for U uniform on the unit sphere of R^d."""
    if any(a % 2 for a in alpha):
        return 0.0
    half = [a // 2 for a in alpha]
    total = sum(half)
    num = math.prod(_double_factorial(2 * a - 1) for a in half)
    den = math.prod(d + 2 * i for i in range(total))
    return num / den


@dataclass
class ConditionCheck:
    passed: bool
    residual: float
    note: str = ""


@dataclass
class ConditionReport:
    """Outcome of the structural kernel checks.

    Attributes
    ----------
    unit_mass : ConditionCheck
        Total integral equals one.
    symmetric : ConditionCheck
        Invariance under coordinate sign flips and permutations, probed on a
        randomized orbit of 256 points.
    identity_second_moment : ConditionCheck
        Second-moment matrix equals the identity.
    smooth : ConditionCheck
        Twice continuously differentiable with integrable first derivatives
        (required by the derivative-of-kernel estimator).
    exp_tilt_integrable : ConditionCheck
        Finiteness of ``int K(z) exp(t ||z||^2 / 2) dz`` for tilts below the
        kernel's declared limit (required by the likelihood solver).
    """

    unit_mass: ConditionCheck
    symmetric: ConditionCheck
    identity_second_moment: ConditionCheck
    smooth: ConditionCheck
    exp_tilt_integrable: ConditionCheck

    @property
    def ok(self):
        """True when the moment conditions used by the estimators hold."""
        return (self.unit_mass.passed and self.symmetric.passed
                and self.identity_second_moment.passed)

    def lines(self):
        out = []
        for name in ("unit_mass", "symmetric", "identity_second_moment",
                     "smooth", "exp_tilt_integrable"):
            chk = getattr(self, name)
            status = "pass" if chk.passed else "FAIL"
            line = f"{name:24s} {status}  residual={chk.residual:.3e}"
            if chk.note:
                line += f"  ({chk.note})"
            out.append(line)
        return out


class Kernel:
    """Base class; subclasses fill in evaluation and raw moments.

    Parameters
    ----------
    d : int
        Ambient dimension.
    """

    name = "kernel"
    #: True when moment values come from closed forms rather than quadrature.
    moments_exact = False
    #: True for radially symmetric kernels (enables refined matching weights).
    spherical = False
    #: True when analytic gradient and Hessian are implemented.
    differentiable = False
    #: Supremum of t such that int K(z) exp(t ||z||^2 / 2) dz is finite.
    tilt_limit = 0.0
    #: Radius of the support; np.inf for full-support kernels.
    support_radius = np.inf

    def __init__(self, d):
        self.d = int(d)
        if self.d < 1:
            raise ValueError("dimension must be a positive integer")
        self._moment_cache = {}
        self._radius_cache = {}

    # -- evaluation ----------------------------------------------------

    def __call__(self, z):
        raise NotImplementedError

    def grad(self, z):
        raise UnsupportedKernelError(
            f"{self.name} kernel has no analytic gradient")

    def hess(self, z):
        raise UnsupportedKernelError(
            f"{self.name} kernel has no analytic Hessian")

    @property
    def peak(self):
        """Supremum of the kernel (attained at the origin for built-ins)."""
        return float(self(np.zeros(self.d))[0])

    # -- moments -------------------------------------------------------

    def moment(self, alpha):
        """Monomial moment ``int K(z) z^alpha dz``.

        Parameters
        ----------
        alpha : sequence of int
            Multi-index of length ``d`` with total order at most 8.
        """
        alpha = _check_alpha(alpha, self.d)
        if alpha not in self._moment_cache:
            self._moment_cache[alpha] = self._raw_moment(alpha)
        return self._moment_cache[alpha]

    def _raw_moment(self, alpha):
        raise NotImplementedError

    def radial_moment(self, k):
        """Moment ``E ||Z||^k`` of the kernel radius (spherical kernels only)."""
        raise UnsupportedKernelError(
            f"{self.name} kernel is not spherical; no radial moments")

    def truncation_radius(self, poly_order=MAX_MOMENT_ORDER, tail=1e-12):
        """Radius beyond which ``K(z) ||z||^poly_order`` has relative mass < tail."""
        if np.isfinite(self.support_radius):
            return float(self.support_radius)
        key = (poly_order, tail)
        if key not in self._radius_cache:
            self._radius_cache[key] = self._solve_truncation(poly_order, tail)
        return self._radius_cache[key]

    def _solve_truncation(self, poly_order, tail):
        raise NotImplementedError

    # -- condition checks ---------------------------------------------

    def check_conditions(self, seed=0):
        """Run the structural checks and return a :class:`ConditionReport`."""
        tol = 1e-8 if self.moments_exact else 1e-6
        d = self.d

        mass = self.moment((0,) * d)
        unit_mass = ConditionCheck(abs(mass - 1.0) <= tol, abs(mass - 1.0))

        resid2 = 0.0
        for j in range(d):
            a = [0] * d
            a[j] = 2
            resid2 = max(resid2, abs(self.moment(a) - 1.0))
        for j in range(d):
            for k in range(j + 1, d):
                a = [0] * d
                a[j] = a[k] = 1
                resid2 = max(resid2, abs(self.moment(a)))
        identity_second = ConditionCheck(resid2 <= tol, resid2)

        symmetric = self._symmetry_check(seed)

        smooth = ConditionCheck(self.differentiable, 0.0,
                                "declared from analytic derivatives")

        tilt = self._tilt_check()

        return ConditionReport(unit_mass, symmetric, identity_second,
                               smooth, tilt)

    def _symmetry_check(self, seed, n_points=256):
        rng = np.random.default_rng(seed)
        scale = self.support_radius if np.isfinite(self.support_radius) else 3.0
        pts = rng.uniform(-scale, scale, size=(n_points, self.d))
        worst = 0.0
        base = self(pts)
        for i in range(n_points):
            perm = rng.permutation(self.d)
            signs = rng.choice([-1.0, 1.0], size=self.d)
            other = float(self(pts[i, perm] * signs)[0])
            worst = max(worst, abs(other - base[i]))
        ref = max(float(np.max(base)), 1e-300)
        return ConditionCheck(worst <= 1e-12 * max(ref, 1.0), worst,
                              "randomized sign/permutation orbit")

    def _tilt_check(self):
        if self.tilt_limit <= 0.0:
            return ConditionCheck(False, np.inf, "no positive tilt declared")
        t = min(self.tilt_limit / 2.0, 4.0)
        r = self.truncation_radius() if np.isfinite(self.support_radius) \
            else self._solve_truncation(2, 1e-10)
        val = self._tilted_mass(t, r)
        return ConditionCheck(np.isfinite(val), val,
                              f"tilt {t:.3g} integrates to {val:.6g}")

    def _tilted_mass(self, t, r):
        # generic radial fallback for spherical kernels; others override
        raise NotImplementedError


class _SphericalBase(Kernel):
    """Shared machinery for radially symmetric kernels.

    Subclasses provide ``_profile(r)`` with ``K(z) = profile(||z||)``.
    """

    spherical = True

    def _profile(self, r):
        raise NotImplementedError

    def __call__(self, z):
        z = _as_points(z, self.d)
        return self._profile(np.sqrt(np.einsum("ni,ni->n", z, z)))

    def radial_moment(self, k):
        key = ("radial", int(k))
        if key not in self._moment_cache:
            self._moment_cache[key] = self._raw_radial_moment(int(k))
        return self._moment_cache[key]

    def _raw_radial_moment(self, k):
        surf = _sphere_surface(self.d)
        hi = self.support_radius if np.isfinite(self.support_radius) else np.inf
        val, _ = quad(lambda r: surf * r ** (self.d - 1 + k) * self._profile(
            np.array([r]))[0], 0.0, hi, limit=200)
        return val

    def _raw_moment(self, alpha):
        total = sum(alpha)
        if any(a % 2 for a in alpha):
            return 0.0
        return self.radial_moment(total) * _uniform_sphere_moment(alpha, self.d)

    def _solve_truncation(self, poly_order, tail):
        surf = _sphere_surface(self.d)

        def shell(r):
            return surf * r ** (self.d - 1 + poly_order) * self._profile(
                np.array([r]))[0]

        total, _ = quad(shell, 0.0, np.inf, limit=200)
        r = 2.0
        while r < 1e4:
            remainder, _ = quad(shell, r, np.inf, limit=200)
            if remainder <= tail * total:
                return r
            r *= 1.25
        raise RuntimeError("could not bracket the kernel tail")

    def _tilted_mass(self, t, r):
        surf = _sphere_surface(self.d)
        hi = min(self.support_radius, r) if np.isfinite(self.support_radius) else r
        val, _ = quad(lambda s: surf * s ** (self.d - 1)
                      * self._profile(np.array([s]))[0]
                      * math.exp(0.5 * t * s * s), 0.0, hi, limit=200)
        return val


class GaussianKernel(_SphericalBase):
    """Standard normal kernel; every moment known in closed form."""

    name = "gaussian"
    moments_exact = True
    differentiable = True
    tilt_limit = 1.0

    def _profile(self, r):
        r = np.asarray(r, dtype=float)
        return np.exp(-0.5 * r * r) * (2.0 * math.pi) ** (-self.d / 2.0)

    def __call__(self, z):
        z = _as_points(z, self.d)
        q = np.einsum("ni,ni->n", z, z)
        return np.exp(-0.5 * q) * (2.0 * math.pi) ** (-self.d / 2.0)

    def grad(self, z):
        z = _as_points(z, self.d)
        return -self(z)[:, None] * z

    def hess(self, z):
        z = _as_points(z, self.d)
        k = self(z)
        outer = np.einsum("ni,nj->nij", z, z)
        return k[:, None, None] * (outer - np.eye(self.d)[None])

    def _raw_moment(self, alpha):
        if any(a % 2 for a in alpha):
            return 0.0
        return float(math.prod(_double_factorial(a - 1) for a in alpha))

    def _raw_radial_moment(self, k):
        # E ||Z||^k = 2^(k/2) Gamma((d+k)/2) / Gamma(d/2)
        return 2.0 ** (k / 2.0) * math.gamma((self.d + k) / 2.0) \
            / math.gamma(self.d / 2.0)

    def _solve_truncation(self, poly_order, tail):
        surf = _sphere_surface(self.d)
        c = (2.0 * math.pi) ** (-self.d / 2.0)

        def shell(r):
            return surf * c * r ** (self.d - 1 + poly_order) * math.exp(-0.5 * r * r)

        total = self._raw_radial_moment(poly_order)
        r = 3.0
        while r < 40.0:
            remainder, _ = quad(shell, r, np.inf, limit=200)
            if remainder <= tail * total:
                return r
            r += 0.5
        return 40.0

    def _tilted_mass(self, t, r):
        return (1.0 - t) ** (-self.d / 2.0)


class UniformBallKernel(_SphericalBase):
    """Uniform density on the ball of radius sqrt(d + 2).

    The radius makes the second-moment matrix exactly the identity, so the
    kernel satisfies the moment conditions while having compact support.
    Not differentiable (jump at the boundary), so it cannot drive the
    derivative-of-kernel estimator; exponential tilts of any size integrate.
    """

    name = "uniform_ball"
    tilt_limit = np.inf

    def __init__(self, d):
        super().__init__(d)
        self.support_radius = math.sqrt(d + 2.0)
        volume = math.pi ** (d / 2.0) * self.support_radius ** d \
            / math.gamma(d / 2.0 + 1.0)
        self._height = 1.0 / volume

    def _profile(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.support_radius, self._height, 0.0)

    def _tilted_mass(self, t, r):
        return _SphericalBase._tilted_mass(self, t, self.support_radius)


class SphericalKernel(_SphericalBase):
    """Radial kernel built from a user profile.

    Use :meth:`standardized` to rescale an arbitrary nonnegative profile so
    that the kernel integrates to one with identity second moment.

    Parameters
    ----------
    d : int
    profile : callable
        Vectorized map from radii (n,) to weights (n,).
    support_radius : float
        Radius beyond which the profile vanishes (np.inf allowed).
    tilt_limit : float, optional
        Declared exponential-tilt integrability limit.  Defaults to infinity
        for compactly supported profiles and zero otherwise.
    """

    name = "spherical"

    def __init__(self, d, profile, support_radius, tilt_limit=None):
        super().__init__(d)
        self._user_profile = profile
        self.support_radius = float(support_radius)
        if tilt_limit is None:
            tilt_limit = np.inf if np.isfinite(self.support_radius) else 0.0
        self.tilt_limit = float(tilt_limit)

    def _profile(self, r):
        r = np.asarray(r, dtype=float)
        out = np.asarray(self._user_profile(r), dtype=float)
        if np.isfinite(self.support_radius):
            out = np.where(r <= self.support_radius, out, 0.0)
        return out

    @classmethod
    def standardized(cls, d, profile, support_radius, tilt_limit=None):
        """Rescale ``profile`` to unit mass and identity second moment."""
        surf = _sphere_surface(d)
        hi = support_radius if np.isfinite(support_radius) else np.inf

        def raw(k):
            val, _ = quad(lambda r: surf * r ** (d - 1 + k)
                          * float(np.asarray(profile(np.array([r])))[0]),
                          0.0, hi, limit=200)
            return val

        mass, second = raw(0), raw(2)
        if mass <= 0 or second <= 0:
            raise ValueError("profile must have positive mass and spread")
        scale = math.sqrt(d * mass / second)
        height = 1.0 / (scale ** d * mass)

        def std_profile(r):
            return height * np.asarray(profile(np.asarray(r) / scale), dtype=float)

        return cls(d, std_profile, support_radius * scale, tilt_limit)


class RectangularKernel(Kernel):
    """Indicator of the box [-1, 1]^d, deliberately unnormalized.

    Ships as the canonical conditions-violating example: it is sign and
    permutation symmetric but has total mass 2^d and non-identity second
    moment, so :meth:`check_conditions` flags it.
    """

    name = "rectangular"
    moments_exact = True
    support_radius = None  # set per-instance below (box corner radius)
    tilt_limit = np.inf

    def __init__(self, d):
        super().__init__(d)
        self.support_radius = math.sqrt(d)

    def __call__(self, z):
        z = _as_points(z, self.d)
        return np.where(np.all(np.abs(z) <= 1.0, axis=1), 1.0, 0.0)

    def _raw_moment(self, alpha):
        if any(a % 2 for a in alpha):
            return 0.0
        return float(math.prod(2.0 / (a + 1) for a in alpha))

    def _tilted_mass(self, t, r):
        val = quad(lambda u: math.exp(0.5 * t * u * u), -1.0, 1.0, limit=200)[0]
        return val ** self.d


class CustomKernel(Kernel):
    """Kernel defined by user callables; moments via adaptive cubature.

    Parameters
    ----------
    d : int
    fn : callable
        Vectorized evaluator mapping (n, d) points to (n,) weights.
    support_radius : float
        Finite truncation radius for the moment integrals (required: the
        cubature needs a box, and tail control is the caller's knowledge).
    grad, hess : callable, optional
        Analytic derivatives; their absence marks the kernel
        non-differentiable.
    spherical : bool, optional
    tilt_limit : float, optional
    peak : float, optional
        Supremum of the kernel if not attained at the origin.
    """

    name = "custom"

    def __init__(self, d, fn, support_radius, grad=None, hess=None,
                 spherical=False, tilt_limit=0.0, peak=None):
        super().__init__(d)
        if not np.isfinite(support_radius):
            raise ValueError("custom kernels need a finite support_radius")
        self._fn = fn
        self._grad = grad
        self._hess = hess
        self.support_radius = float(support_radius)
        self.spherical = bool(spherical)
        self.differentiable = grad is not None and hess is not None
        self.tilt_limit = float(tilt_limit) if np.isfinite(tilt_limit) else np.inf
        self._peak = peak

    @property
    def peak(self):
        if self._peak is not None:
            return float(self._peak)
        return float(self(np.zeros(self.d))[0])

    def __call__(self, z):
        z = _as_points(z, self.d)
        return np.asarray(self._fn(z), dtype=float)

    def grad(self, z):
        if self._grad is None:
            raise UnsupportedKernelError("custom kernel lacks a gradient")
        return np.asarray(self._grad(_as_points(z, self.d)), dtype=float)

    def hess(self, z):
        if self._hess is None:
            raise UnsupportedKernelError("custom kernel lacks a Hessian")
        return np.asarray(self._hess(_as_points(z, self.d)), dtype=float)

    def _raw_moment(self, alpha):
        from .quadrature import box_integrate

        def integrand(z):
            out = self(z)
            for j, a in enumerate(alpha):
                if a:
                    out = out * z[:, j] ** a
            return out[:, None]

        r = self.support_radius
        return float(box_integrate(integrand, self.d, r)[0])

    def _tilted_mass(self, t, r):
        from .quadrature import box_integrate

        def integrand(z):
            q = np.einsum("ni,ni->n", z, z)
            return (self(z) * np.exp(0.5 * t * q))[:, None]

        return float(box_integrate(integrand, self.d, self.support_radius)[0])


_BUILTIN = {
    "gaussian": GaussianKernel,
    "uniform_ball": UniformBallKernel,
    "rectangular": RectangularKernel,
}


def kernel_by_name(name, d):
    """Instantiate a built-in kernel by CLI name."""
    try:
        cls = _BUILTIN[name]
    except KeyError:
        raise ValueError(
            f"unknown kernel {name!r}; choose from {sorted(_BUILTIN)}") from None
    return cls(d)
