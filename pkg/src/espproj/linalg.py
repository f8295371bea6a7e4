"""Rank, null-space, and affine-projection primitives shared by the whole package.

Everything here is a thin, deterministic layer over numpy's SVD.  The two
conventions that matter (and that the rest of the code relies on) are:

* numerical rank uses a cutoff *relative to the largest singular value*,
  so row scaling does not change the answer;
* null-space bases are orthonormal and sign-fixed (first nonzero entry of
  each basis vector is positive), so repeated calls are bitwise identical
  and results are comparable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ToleranceConfig:
    """Global numeric tolerances.

    rank_tol   relative SVD cutoff for rank decisions
    feas_tol   absolute slack tolerance for feasibility checks
    eq_tol     absolute tolerance for calling a constraint active
    uniq_tol   tolerance for comparing minimizers / normals for equality
    """

    rank_tol: float = 1e-9
    feas_tol: float = 1e-8
    eq_tol: float = 1e-7
    uniq_tol: float = 1e-8

    def __post_init__(self) -> None:
        for name in ("rank_tol", "feas_tol", "eq_tol", "uniq_tol"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.rank_tol > 1e-6:
            raise ValueError(f"rank_tol must be <= 1e-6, got {self.rank_tol}")


def rank(m: np.ndarray, tol: float = 1e-9) -> int:
    """Numerical rank of ``m`` with cutoff ``tol`` relative to sigma_max."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0
    sigma = np.linalg.svd(m, compute_uv=False)
    if sigma.size == 0 or sigma[0] <= 0.0:
        return 0
    return int(np.count_nonzero(sigma > tol * sigma[0]))


def _fix_column_signs(basis: np.ndarray) -> np.ndarray:
    """Flip each column so its first nonzero entry is positive."""
    out = basis.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12 * max(1.0, np.abs(col).max()))[0]
        if nz.size and col[nz[0]] < 0.0:
            out[:, j] = -col
    return out


def orth_null_basis(m: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis of the null space of ``m``, one vector per column.

    The basis is sign-fixed (first nonzero entry of each column positive).
    For an all-zero or empty ``m`` the null space is everything, and the
    identity is returned.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    n = m.shape[1]
    if m.size == 0:
        return np.eye(n)
    u, sigma, vt = np.linalg.svd(m)
    if sigma.size == 0 or sigma[0] <= 0.0:
        r = 0
    else:
        r = int(np.count_nonzero(sigma > tol * sigma[0]))
    basis = vt[r:].T  # columns span the null space, already orthonormal
    return _fix_column_signs(basis)


def affine_projection_rows(
    c_e: np.ndarray, d_e: np.ndarray, b_e: np.ndarray, tol: float = 1e-9
) -> tuple[np.ndarray, np.ndarray]:
    """Project the affine set {(x, y) : C_E x + D_E y = b_E} onto x-space.

    Combinations v with v^T D_E = 0 turn the system into pure-x equations
    v^T C_E x = v^T b_E; stacking an orthonormal basis of those v gives the
    affine hull of the projection.  Returns ``(W, w)`` with shape
    ``(r, d)`` / ``(r,)``; ``r`` is zero when D_E^T has trivial null space
    (the projection of the affine set is then all of x-space).
    """
    c_e = np.atleast_2d(np.asarray(c_e, dtype=float))
    d_e = np.atleast_2d(np.asarray(d_e, dtype=float))
    b_e = np.asarray(b_e, dtype=float).ravel()
    if c_e.shape[0] == 0:
        return np.zeros((0, c_e.shape[1])), np.zeros(0)
    n = orth_null_basis(d_e.T, tol)
    if n.shape[1] == 0:
        return np.zeros((0, c_e.shape[1])), np.zeros(0)
    return n.T @ c_e, n.T @ b_e


def row_space_basis(rows: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (as rows) of the row space of ``rows``."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0:
        return np.zeros((0, rows.shape[1]))
    u, sigma, vt = np.linalg.svd(rows)
    if sigma.size == 0 or sigma[0] <= 0.0:
        return np.zeros((0, rows.shape[1]))
    r = int(np.count_nonzero(sigma > tol * sigma[0]))
    return vt[:r]


def in_row_space(row: np.ndarray, basis_rows: np.ndarray, tol: float = 1e-7) -> bool:
    """True if ``row`` lies in the span of ``basis_rows`` (orthonormal rows)."""
    row = np.asarray(row, dtype=float).ravel()
    basis_rows = np.atleast_2d(np.asarray(basis_rows, dtype=float))
    if basis_rows.shape[0] == 0:
        return bool(np.linalg.norm(row) <= tol)
    resid = row - basis_rows.T @ (basis_rows @ row)
    scale = max(1.0, float(np.linalg.norm(row)))
    return bool(np.linalg.norm(resid) <= tol * scale)
