"""Sparse storage, 2x2 block composition and the direct solver.

Matrices are ``scipy.sparse.csr_matrix`` (compressed row storage).  The
factorization is SuperLU with a COLAMD fill-reducing column ordering.
Coupled systems use segregated ordering: all pressures, then all
saturations.
"""

from __future__ import annotations

from dataclasses import dataclass

import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_CUTOFF = 500
PIVOT_TOL = 1e-14


class LinearSolverError(RuntimeError):
    """Raised when a factorization hits a (numerically) singular pivot."""


@dataclass(frozen=True)
class BlockSystem:
    """2x2 block operator ``[[App, Aps], [Asp, Ass]]`` with optional rhs pair."""

    App: sp.spmatrix
    Aps: sp.spmatrix
    Asp: sp.spmatrix
    Ass: sp.spmatrix
    rhs_p: np.ndarray | None = None
    rhs_s: np.ndarray | None = None

    def __post_init__(self):
        m = self.App.shape[0]
        for name in ("App", "Aps", "Asp", "Ass"):
            if getattr(self, name).shape != (m, m):
                raise ValueError(
                    f"block {name} has shape {getattr(self, name).shape}, expected {(m, m)}"
                )

    @property
    def size(self) -> int:
        return self.App.shape[0]

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_p, self.rhs_s])


def block_assemble(blocks: BlockSystem) -> sp.csr_matrix:
    return sp.bmat(
        [[blocks.App, blocks.Aps], [blocks.Asp, blocks.Ass]], format="csr"
    )


def lower_block_matvec(App, Asp, Ass, v1, v2):
    """Apply ``[[App, 0], [Asp, Ass]]`` to the pair ``(v1, v2)``."""
    return App @ v1, Asp @ v1 + Ass @ v2


def _row_norm_max(A) -> float:
    if sp.issparse(A):
        sq = A.multiply(A).sum(axis=1)
        return float(np.sqrt(np.max(np.asarray(sq)))) if A.shape[0] else 0.0
    return float(np.max(np.linalg.norm(A, axis=1))) if A.shape[0] else 0.0


def lu_solve(A, b, dense: bool | None = None) -> np.ndarray:
    """Solve ``A x = b`` by LU with partial pivoting.

    Raises :class:`LinearSolverError` when a pivot falls below
    ``PIVOT_TOL`` times the largest row norm of ``A``, or when the result
    is not finite.
    """
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape[0] != n:
        raise ValueError("lu_solve needs a square matrix and conforming rhs")
    scale = _row_norm_max(A)
    if scale == 0.0:
        raise LinearSolverError("zero matrix")
    threshold = PIVOT_TOL * scale
    if dense is None:
        dense = n < DENSE_CUTOFF
    if dense:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        with warnings.catch_warnings():
            # singularity is reported below through the pivot check
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(Ad, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if np.min(pivots) < threshold:
            raise LinearSolverError(f"singular pivot {np.min(pivots):.3e}")
        x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    else:
        try:
            lu = spla.splu(sp.csc_matrix(A), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise LinearSolverError(str(exc)) from exc
        pivots = np.abs(lu.U.diagonal())
        if np.min(pivots) < threshold:
            raise LinearSolverError(f"singular pivot {np.min(pivots):.3e}")
        x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise LinearSolverError("non-finite solution")
    return x
