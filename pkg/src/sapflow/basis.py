"""Penalized B-spline building blocks.

This module owns the low-level pieces the additive model is assembled
from: clamped B-spline bases on equally spaced knots, difference penalties
on their coefficients, tensor-product rows for bivariate surfaces, varying
coefficient rows, by-factor block rows, and the sum-to-zero reparameterization
that keeps smooth terms identifiable next to an intercept.

Evaluation uses the standard recurrence

    B[i,0](x) = 1 if t[i] <= x < t[i+1] else 0
    B[i,d](x) = (x - t[i]) / (t[i+d] - t[i]) * B[i,d-1](x)
              + (t[i+d+1] - x) / (t[i+d+1] - t[i+1]) * B[i+1,d-1](x)

on a knot vector whose boundary knots are replicated ``degree + 1`` times,
so the basis sums to one everywhere on the domain and the first/last basis
function hits exactly 1.0 at the domain edges.  Inputs outside the domain
are clamped to the nearest edge before evaluation; prediction code counts
how often that happens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadCategory, InsufficientData, OrderTooLarge, RankDeficient

__all__ = [
    "BasisDef",
    "make_bspline_basis",
    "bspline_row",
    "bspline_matrix",
    "difference_penalty",
    "tensor_row",
    "tensor_matrix",
    "tensor_penalty",
    "varying_coeff_row",
    "by_factor_row",
    "SumToZero",
    "apply_sum_to_zero",
]


@dataclass(frozen=True)
class BasisDef:
    """A fixed B-spline basis: degree, size, knots and domain.

    ``knots`` is the full padded vector of length ``num_basis + degree + 1``
    with the boundary values replicated ``degree + 1`` times.  The number of
    strictly interior knots is therefore ``num_basis - degree - 1``.
    """

    degree: int
    num_basis: int
    knots: np.ndarray
    lo: float
    hi: float

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=float).copy()
        if len(knots) != self.num_basis + self.degree + 1:
            raise ValueError(
                f"knot vector length {len(knots)} != num_basis + degree + 1 "
                f"= {self.num_basis + self.degree + 1}"
            )
        interior = knots[self.degree + 1 : self.num_basis]
        if len(interior) and not np.all(np.diff(interior) > 0):
            raise ValueError("interior knots must be strictly increasing")
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "num_basis": self.num_basis,
            "knots": [float(v) for v in self.knots],
            "lo": float(self.lo),
            "hi": float(self.hi),
        }

    @staticmethod
    def from_dict(d: dict) -> "BasisDef":
        return BasisDef(
            degree=int(d["degree"]),
            num_basis=int(d["num_basis"]),
            knots=np.asarray(d["knots"], dtype=float),
            lo=float(d["lo"]),
            hi=float(d["hi"]),
        )


def make_bspline_basis(lo: float, hi: float, num_basis: int, degree: int = 3) -> BasisDef:
    """Equally spaced clamped basis of ``num_basis`` functions on [lo, hi]."""
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        raise ValueError(f"domain [{lo}, {hi}] is empty or not finite")
    if degree < 0:
        raise ValueError("degree must be >= 0")
    n_interior = num_basis - degree - 1
    if n_interior < 0:
        raise ValueError(
            f"num_basis={num_basis} too small for degree {degree} (need >= degree + 1)"
        )
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    knots = np.concatenate(
        [np.full(degree + 1, lo), interior, np.full(degree + 1, hi)]
    )
    return BasisDef(degree=degree, num_basis=num_basis, knots=knots, lo=lo, hi=hi)


def bspline_matrix(basis: BasisDef, x: np.ndarray) -> np.ndarray:
    """Evaluate every basis function at every point: an (n, num_basis) matrix.

    Points outside ``[lo, hi]`` are clamped to the edge first, so each row
    still sums to one.
    """
    x = np.clip(np.asarray(x, dtype=float), basis.lo, basis.hi)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    t, d, k = basis.knots, basis.degree, basis.num_basis
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, d, k - 1)

    n_pts = x.shape[0]
    nz = np.zeros((n_pts, d + 1))
    nz[:, 0] = 1.0
    left = np.empty((n_pts, max(d, 1)))
    right = np.empty((n_pts, max(d, 1)))
    for j in range(1, d + 1):
        left[:, j - 1] = x - t[span + 1 - j]
        right[:, j - 1] = t[span + j] - x
        saved = np.zeros(n_pts)
        for r in range(j):
            # denominator spans a window containing a non-degenerate
            # interval, so it is strictly positive
            denom = right[:, r] + left[:, j - 1 - r]
            temp = nz[:, r] / denom
            nz[:, r] = saved + right[:, r] * temp
            saved = left[:, j - 1 - r] * temp
        nz[:, j] = saved

    out = np.zeros((n_pts, k))
    cols = span[:, None] - d + np.arange(d + 1)[None, :]
    out[np.arange(n_pts)[:, None], cols] = nz
    if scalar:
        return out[0]
    return out


def bspline_row(basis: BasisDef, x: float) -> np.ndarray:
    """Basis values at one point, as a length ``num_basis`` vector."""
    return bspline_matrix(basis, np.asarray(float(x)))


def difference_penalty(num_basis: int, order: int = 2) -> np.ndarray:
    """Penalty matrix ``D' D`` of the order-``order`` coefficient differences.

    The null space of the result is spanned by polynomial coefficient
    sequences of degree below ``order`` (constants for order 1, constants
    and linear ramps for order 2, ...).
    """
    if order < 1:
        raise ValueError("difference order must be >= 1")
    if order >= num_basis:
        raise OrderTooLarge(f"order {order} >= num_basis {num_basis}")
    d = np.diff(np.eye(num_basis), n=order, axis=0)
    return d.T @ d


def tensor_row(row_x: np.ndarray, row_y: np.ndarray) -> np.ndarray:
    """Row of a tensor-product smooth: the Kronecker product of two rows."""
    return np.kron(row_x, row_y)


def tensor_matrix(mat_x: np.ndarray, mat_y: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product of two basis matrices (same row count)."""
    if mat_x.shape[0] != mat_y.shape[0]:
        raise ValueError("tensor factors must have the same number of rows")
    return (mat_x[:, :, None] * mat_y[:, None, :]).reshape(mat_x.shape[0], -1)


def tensor_penalty(pen_x: np.ndarray, pen_y: np.ndarray) -> np.ndarray:
    """Isotropic tensor penalty ``Sx (x) I + I (x) Sy`` in row-Kronecker layout."""
    kx, ky = pen_x.shape[0], pen_y.shape[0]
    return np.kron(pen_x, np.eye(ky)) + np.kron(np.eye(kx), pen_y)


def varying_coeff_row(row: np.ndarray, multiplier: float) -> np.ndarray:
    """Varying-coefficient row: each basis value scaled by the multiplier."""
    return row * float(multiplier)


def by_factor_row(row: np.ndarray, category: int, levels: int) -> np.ndarray:
    """Place a basis row in the block belonging to one factor level.

    The output has ``levels * len(row)`` entries, zero outside the block of
    the given category, so each level gets its own copy of the smooth.
    """
    if not 0 <= category < levels:
        raise BadCategory(f"category {category} outside [0, {levels})")
    k = len(row)
    out = np.zeros(levels * k)
    out[category * k : (category + 1) * k] = row
    return out


@dataclass(frozen=True)
class SumToZero:
    """Reparameterization enforcing that a smooth's fitted values sum to zero
    over the training rows.

    ``matrix`` has shape (k, k-1); constrained coefficients ``b`` map back to
    the original basis as ``matrix @ b``.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float).copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def apply(self, block: np.ndarray) -> np.ndarray:
        """Map raw basis rows into the constrained parameterization."""
        return np.asarray(block) @ self.matrix

    def penalty(self, pen: np.ndarray) -> np.ndarray:
        return self.matrix.T @ pen @ self.matrix

    def expand(self, coef: np.ndarray) -> np.ndarray:
        """Constrained coefficients back to the full basis."""
        return self.matrix @ np.asarray(coef)

    def to_list(self) -> list[list[float]]:
        return [[float(v) for v in row] for row in self.matrix]


def apply_sum_to_zero(block: np.ndarray) -> tuple[np.ndarray, SumToZero]:
    """Build the sum-to-zero constraint for one training design block.

    Given an (n, k) block ``B``, finds an orthonormal basis ``Z`` of the
    null space of ``1' B`` and returns ``(B Z, SumToZero(Z))``.  Every
    column of ``B Z`` is orthogonal to the all-ones vector, so any fitted
    contribution of the term averages to zero over the training rows and
    the intercept stays identifiable.
    """
    block = np.asarray(block, dtype=float)
    if block.ndim != 2:
        raise ValueError("design block must be 2-d")
    n, k = block.shape
    if n <= k:
        raise InsufficientData(f"need more rows than columns to constrain ({n} <= {k})")
    col_sums = block.sum(axis=0)
    scale = max(1.0, float(np.abs(block).sum(axis=0).max()))
    if np.linalg.norm(col_sums) <= 1e-12 * scale:
        raise RankDeficient(
            "block columns already sum to zero; sum-to-zero constraint is degenerate"
        )
    q, _ = np.linalg.qr(col_sums.reshape(-1, 1), mode="complete")
    z = q[:, 1:]
    return block @ z, SumToZero(z)
