"""Piecewise-linear finite elements on level-m meshes.

The mass matrix is assembled exactly from moments of the pulled-back measures
``mu o T_J``: on cell ``T_J[a, b]`` the rising tent is ``(x - a)/(b - a)`` and
the falling one ``(b - x)/(b - a)`` in pulled-back coordinates, so every entry
is a quadratic polynomial integrated against ``mu o T_J``.  The stiffness
matrix follows the sign convention ``K_ij = -int phi_i' phi_j' dx``, so that
the semi-discrete wave equation reads ``M w'' = K w``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.linalg import lapack

from .measure import MeasureSpec, level_moments
from .mesh import LevelMesh

__all__ = [
    "TriDiag",
    "SingularMatrixError",
    "PiecewiseLinear",
    "full_mass_matrix",
    "mass_matrix",
    "full_stiffness_matrix",
    "stiffness_matrix",
    "dominance_margins",
    "is_strictly_diagonally_dominant",
    "tridiag_solve",
    "l2mu_norm",
    "project",
    "evaluate",
]

PIVOT_TOL = 1e-14


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class TriDiag:
    """Tridiagonal matrix stored as three diagonals."""

    diag: np.ndarray
    sub: np.ndarray
    sup: np.ndarray

    def __post_init__(self):
        for attr in ("diag", "sub", "sup"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        if self.sub.shape != (max(self.n - 1, 0),) or self.sup.shape != self.sub.shape:
            raise ValueError("off-diagonals must have length n - 1")

    @classmethod
    def symmetric(cls, diag, off) -> "TriDiag":
        off = np.asarray(off, dtype=float)
        return cls(diag, off, off)

    @property
    def n(self) -> int:
        return self.diag.size

    @property
    def is_symmetric(self) -> bool:
        return np.array_equal(self.sub, self.sup)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.diag * x
        y[1:] += self.sub * x[:-1]
        y[:-1] += self.sup * x[1:]
        return y

    __matmul__ = matvec

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub, -1) + np.diag(self.sup, 1)

    def interior(self) -> "TriDiag":
        """Drop the first and last rows and columns."""
        return TriDiag(self.diag[1:-1], self.sub[1:-1], self.sup[1:-1])

    def scaled(self, factor: float) -> "TriDiag":
        return TriDiag(factor * self.diag, factor * self.sub, factor * self.sup)

    @cached_property
    def _lu(self):
        if self.n == 0:
            raise SingularMatrixError("empty matrix")
        if self.n <= 2:
            # the LAPACK wrapper cannot size du2 for n < 3
            dense = self.to_dense()
            if abs(np.linalg.det(dense)) <= PIVOT_TOL * np.max(np.abs(self.diag)) ** self.n:
                raise SingularMatrixError("tridiagonal matrix is singular to working precision")
            return dense
        dl, d, du, du2, ipiv, info = lapack.dgttrf(self.sub, self.diag, self.sup)
        if info != 0 or np.any(np.abs(d) <= PIVOT_TOL * np.max(np.abs(self.diag))):
            raise SingularMatrixError("tridiagonal matrix is singular to working precision")
        return dl, d, du, du2, ipiv

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve with a cached LU factorization (for repeated solves)."""
        lu = self._lu
        if isinstance(lu, np.ndarray):
            return np.linalg.solve(lu, np.asarray(rhs, dtype=float))
        dl, d, du, du2, ipiv = lu
        x, info = lapack.dgttrs(dl, d, du, du2, ipiv, np.asarray(rhs, dtype=float))
        if info != 0:
            raise SingularMatrixError(f"dgttrs failed with info={info}")
        return x


def tridiag_solve(A: TriDiag, rhs) -> np.ndarray:
    """Thomas algorithm without pivoting.

    Raises SingularMatrixError when a pivot falls below ``1e-14 * max|diag|``.
    Fine for the diagonally dominant and definite systems assembled here.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = A.n
    if rhs.shape[0] != n:
        raise ValueError(f"rhs has length {rhs.shape[0]}, matrix has order {n}")
    if n == 0:
        return rhs.copy()
    thresh = PIVOT_TOL * np.max(np.abs(A.diag))
    c = np.empty(n)
    x = np.array(rhs, dtype=float)
    piv = A.diag[0]
    if abs(piv) <= thresh:
        raise SingularMatrixError("zero pivot in row 1")
    c[0] = A.sup[0] / piv if n > 1 else 0.0
    x[0] = x[0] / piv
    for i in range(1, n):
        piv = A.diag[i] - A.sub[i - 1] * c[i - 1]
        if abs(piv) <= thresh:
            raise SingularMatrixError(f"zero pivot in row {i + 1}")
        c[i] = A.sup[i] / piv if i < n - 1 else 0.0
        x[i] = (x[i] - A.sub[i - 1] * x[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        x[i] -= c[i] * x[i + 1]
    return x


# --------------------------------------------------------------------------
# assembly


def _cell_integrals(spec: MeasureSpec, mesh: LevelMesh):
    """Per-cell integrals of rise**2, fall**2 and rise*fall against mu."""
    if mesh.spec is not spec:
        raise ValueError("mesh was built from a different measure")
    mom = level_moments(spec, mesh.level)
    m0, m1, m2 = mom[:, 0], mom[:, 1], mom[:, 2]
    a, b = spec.support
    s = (b - a) ** 2
    rise = (m2 - 2.0 * a * m1 + a * a * m0) / s
    fall = (b * b * m0 - 2.0 * b * m1 + m2) / s
    cross = (-m2 + (a + b) * m1 - a * b * m0) / s
    return rise, fall, cross, mom


def full_mass_matrix(spec: MeasureSpec, mesh: LevelMesh) -> TriDiag:
    """Mass matrix over all ``N**m + 1`` nodes, boundary included."""
    rise, fall, cross, _ = _cell_integrals(spec, mesh)
    diag = np.zeros(mesh.nodes.size)
    diag[1:] += rise
    diag[:-1] += fall
    return TriDiag.symmetric(diag, cross)


def mass_matrix(spec: MeasureSpec, mesh: LevelMesh) -> TriDiag:
    """Dirichlet mass matrix of order ``N**m - 1``."""
    return full_mass_matrix(spec, mesh).interior()


def full_stiffness_matrix(mesh: LevelMesh) -> TriDiag:
    h = mesh.widths
    if np.any(h <= 0):
        raise ValueError("mesh has a zero-length subinterval")
    inv = 1.0 / h
    diag = np.zeros(mesh.nodes.size)
    diag[1:] -= inv
    diag[:-1] -= inv
    return TriDiag.symmetric(diag, inv)


def stiffness_matrix(mesh: LevelMesh) -> TriDiag:
    """``K_ij = -int phi_i' phi_j' dx`` over interior nodes (negative definite)."""
    return full_stiffness_matrix(mesh).interior()


def dominance_margins(spec: MeasureSpec, mesh: LevelMesh) -> np.ndarray:
    """Row margins ``M_ii - sum_{j != i} M_ij`` of the Dirichlet mass matrix.

    Each margin is evaluated as an integral of one of the quadratics
    p1 = (x-a)^2, p2 = (x-a)(2x-a-b), p3 = (b-x)(a+b-2x), p4 = (b-x)^2
    (all over (b-a)^2) against the two cells adjacent to the row's node:
    the left cell carries p2 (p1 for the first row) and the right cell p3
    (p4 for the last row).  Positive margins certify strict dominance.
    """
    rise, fall, cross, _ = _cell_integrals(spec, mesh)
    n = mesh.n_interior
    if n < 1:
        return np.zeros(0)
    left = rise[:n].copy()  # cell i-1 (0-based node i)
    right = fall[1 : n + 1].copy()
    if n > 1:
        left[1:] -= cross[1:n]  # p2 = p1 - cross on cells with a left neighbour row
        right[:-1] -= cross[1:n]  # p3 = p4 - cross on cells with a right neighbour row
    return left + right


def is_strictly_diagonally_dominant(A: TriDiag) -> bool:
    off = np.zeros(A.n)
    off[1:] += np.abs(A.sub)
    off[:-1] += np.abs(A.sup)
    return bool(np.all(np.abs(A.diag) > off))


# --------------------------------------------------------------------------
# piecewise-linear functions


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Continuous piecewise-linear function given by its nodal values."""

    mesh: LevelMesh
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != self.mesh.nodes.shape:
            raise ValueError(f"expected {self.mesh.nodes.size} nodal values, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("nodal values must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_interior(cls, mesh: LevelMesh, w: np.ndarray) -> "PiecewiseLinear":
        c = np.zeros(mesh.nodes.size)
        c[1:-1] = w
        return cls(mesh, c)

    @property
    def interior(self) -> np.ndarray:
        return self.coeffs[1:-1]

    def __call__(self, x):
        return evaluate(self, x)


def l2mu_norm(spec: MeasureSpec, mesh: LevelMesh, f: PiecewiseLinear, mass: TriDiag | None = None) -> float:
    """Exact ``L^2_mu`` norm ``sqrt(c^T M_full c)``."""
    if not f.mesh.compatible(mesh):
        raise ValueError("function lives on a different mesh")
    if mass is None:
        mass = full_mass_matrix(spec, mesh)
    c = f.coeffs
    return float(np.sqrt(max(float(c @ mass.matvec(c)), 0.0)))


def _sample(v: Callable, x: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(v(x), dtype=float)
    except (TypeError, ValueError):
        vals = None
    if vals is None or vals.shape != x.shape:
        vals = np.array([float(v(t)) for t in x])
    return vals


def project(v: Callable, mesh: LevelMesh) -> PiecewiseLinear:
    """Nodal interpolant of ``v`` (the Rayleigh-Ritz projection for Dirichlet data)."""
    vals = _sample(v, np.asarray(mesh.nodes))
    if not np.all(np.isfinite(vals)):
        raise ValueError("function is not finite at every node")
    return PiecewiseLinear(mesh, vals)


def evaluate(f: PiecewiseLinear, x):
    """Linear interpolation between the bracketing nodes."""
    nodes = f.mesh.nodes
    xa = np.asarray(x, dtype=float)
    slack = 1e-12 * (nodes[-1] - nodes[0])
    if np.any(xa < nodes[0] - slack) or np.any(xa > nodes[-1] + slack):
        raise ValueError(f"evaluation point outside [{nodes[0]}, {nodes[-1]}]")
    out = np.interp(xa, nodes, f.coeffs)
    return float(out) if out.ndim == 0 else out
