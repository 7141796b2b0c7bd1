"""Dense real LU layer: factor the order-independent embedding matrix once, solve many columns."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, lu_solve


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, row: int):
        super().__init__(f"matrix is exactly singular: zero pivot at row {row}")
        self.row = row


@dataclass(frozen=True)
class Factorization:
    lu: np.ndarray
    piv: np.ndarray
    rcond: float

    @property
    def n(self) -> int:
        return self.lu.shape[0]

    @property
    def condition(self) -> float:
        """Reciprocal of LAPACK's 1-norm reciprocal condition estimate."""
        return np.inf if self.rcond == 0 else 1.0 / self.rcond


def factorize(A) -> Factorization:
    """LU with partial pivoting (``PA = LU``) plus a 1-norm condition estimate."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return Factorization(A.copy(), np.zeros(0, dtype=np.int32), 1.0)
    lu, piv, info = lapack.dgetrf(A)
    if info > 0:
        raise SingularMatrixError(info - 1)
    anorm = np.abs(A).sum(axis=0).max()
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    return Factorization(lu, piv, float(rcond))


def solve_many(F: Factorization, B) -> np.ndarray:
    """Solve ``A X = B`` column by column for a (n,) vector or (n, k) matrix ``B``."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != F.n:
        raise ValueError(f"right-hand side has {B.shape[0]} rows, system has {F.n}")
    if F.n == 0:
        return B.copy()
    return lu_solve((F.lu, F.piv), B, check_finite=False)


def solve(A, b) -> np.ndarray:
    return solve_many(factorize(A), b)
