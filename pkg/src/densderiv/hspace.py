"""Scalar / vector / symmetric-matrix triples.

All four estimation paradigms produce (value, gradient, Hessian)-shaped
objects, and the local sample moments have the same shape.  :class:`Jet`
is the shared container: an element of R x R^d x Sym(d), with the inner
product

    <u, v> = u.value * v.value + u.vector . v.vector
             + trace(u.matrix @ v.matrix) / 2

whose factor 1/2 accounts for the symmetric duplication of off-diagonal
entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def symmetrize(mat):
    """Mirror the upper triangle so the result is exactly symmetric."""
    mat = np.asarray(mat, dtype=float)
    upper = np.triu(mat)
    return upper + np.triu(mat, 1).T


@dataclass(frozen=True)
class Jet:
    """Value, vector and symmetric-matrix triple at a point.

    Parameters
    ----------
    value : float
    vector : ndarray of shape (d,)
    matrix : ndarray of shape (d, d)
        Stored exactly symmetric: the upper triangle wins on construction.
    """

    value: float
    vector: np.ndarray
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float))
        object.__setattr__(self, "matrix", symmetrize(self.matrix))
        if self.vector.ndim != 1 or self.matrix.shape != (self.dim, self.dim):
            raise ValueError("vector must be (d,) and matrix (d, d)")

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    @classmethod
    def zero(cls, d: int) -> "Jet":
        return cls(0.0, np.zeros(d), np.zeros((d, d)))

    def __add__(self, other: "Jet") -> "Jet":
        return Jet(self.value + other.value, self.vector + other.vector,
                   self.matrix + other.matrix)

    def __sub__(self, other: "Jet") -> "Jet":
        return Jet(self.value - other.value, self.vector - other.vector,
                   self.matrix - other.matrix)

    def __mul__(self, scalar) -> "Jet":
        scalar = float(scalar)
        return Jet(scalar * self.value, scalar * self.vector, scalar * self.matrix)

    __rmul__ = __mul__

    def __neg__(self) -> "Jet":
        return self * -1.0

    def inner(self, other: "Jet") -> float:
        """Inner product with the half-weight on the matrix block."""
        return (self.value * other.value
                + float(self.vector @ other.vector)
                + 0.5 * float(np.tensordot(self.matrix, other.matrix)))

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def poly_at(self, z):
        """Evaluate the quadratic polynomial with these coefficients.

        Treats the triple as (constant, linear, quadratic) coefficients and
        returns ``value + vector.z + z.matrix.z / 2`` for each row of ``z``.

        Parameters
        ----------
        z : ndarray of shape (n, d) or (d,)

        Returns
        -------
        ndarray of shape (n,) or scalar
        """
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        zz = z[None, :] if single else z
        out = (self.value + zz @ self.vector
               + 0.5 * np.einsum("ni,ij,nj->n", zz, self.matrix, zz))
        return float(out[0]) if single else out

    # Plain coordinates (value, vector, upper triangle row-major).  Used by the
    # Newton solver to move between triples and flat unknowns.

    def to_coords(self) -> np.ndarray:
        iu = np.triu_indices(self.dim)
        return np.concatenate(([self.value], self.vector, self.matrix[iu]))

    @classmethod
    def from_coords(cls, coords, d: int) -> "Jet":
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (coord_count(d),):
            raise ValueError("coordinate vector has wrong length")
        value = coords[0]
        vector = coords[1:1 + d]
        mat = np.zeros((d, d))
        mat[np.triu_indices(d)] = coords[1 + d:]
        return cls(value, vector, mat)

    @classmethod
    def basis(cls, d: int):
        """Coordinate basis triples (off-diagonal units are symmetric pairs)."""
        p = coord_count(d)
        return [cls.from_coords(np.eye(p)[k], d) for k in range(p)]


def coord_count(d: int) -> int:
    """Dimension of the triple space: 1 + d + d(d+1)/2."""
    return 1 + d + d * (d + 1) // 2


def coord_weights(d: int) -> np.ndarray:
    """Diagonal metric of the inner product in the triu chart.

    Satisfies ``u.inner(v) == u.to_coords() @ (coord_weights(d) *
    v.to_coords())``: the half-weight sits on the diagonal matrix slots,
    while each off-diagonal slot carries weight one because it stands for
    a symmetric pair of entries.
    """
    iu, ju = np.triu_indices(d)
    return np.concatenate(
        [np.ones(1 + d), np.where(iu == ju, 0.5, 1.0)])
