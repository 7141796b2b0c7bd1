"""Real-valued layout of the per-order embedding system shared by the germ and MDHEM recursions.

Unknowns are ordered as ``[Re V_1, Im V_1, ..., Re V_N, Im V_N]`` followed,
for every augmented bus, by ``Re W, Im W`` and then one real ``Q`` per PV
bus. Rows mirror the columns: bus ``i`` owns rows ``2i, 2i+1`` (slack pin or
power balance), an augmented bus owns two reciprocal-definition rows at its
``W`` columns and a PV bus owns the voltage-magnitude row at its ``Q``
column.

Power-balance rows read::

    sum_k Y_ik V_k[n] - a_i W_i*[n] + j W_i*[0] Q_i[n] = rhs

where ``a_i`` is the same-order coefficient of ``W_i*[n]`` moved to the left.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SystemLayout:
    n_bus: int
    slack: tuple[int, ...]
    pv: tuple[int, ...]
    aug: tuple[int, ...]

    @property
    def w_col(self) -> dict[int, int]:
        base = 2 * self.n_bus
        return {b: base + 2 * j for j, b in enumerate(self.aug)}

    @property
    def q_col(self) -> dict[int, int]:
        base = 2 * self.n_bus + 2 * len(self.aug)
        return {b: base + j for j, b in enumerate(self.pv)}

    @property
    def dim(self) -> int:
        return 2 * self.n_bus + 2 * len(self.aug) + len(self.pv)


def _add_complex(A, r, c, coef: complex, conj: bool = False) -> None:
    """Add ``coef * x`` (or ``coef * conj(x)``) to rows r, r+1 with x stored at cols c, c+1."""
    cr, ci = coef.real, coef.imag
    if conj:
        A[r, c] += cr
        A[r, c + 1] += ci
        A[r + 1, c] += ci
        A[r + 1, c + 1] -= cr
    else:
        A[r, c] += cr
        A[r, c + 1] -= ci
        A[r + 1, c] += ci
        A[r + 1, c + 1] += cr


def assemble(Y: np.ndarray, layout: SystemLayout, V0, W0, Q_coef: dict[int, complex],
             W_coef: dict[int, complex]) -> np.ndarray:
    """Build the order-independent real matrix.

    ``Q_coef[i]`` multiplies ``Q_i[n]`` in bus i's balance row (``j W_i*[0]``) and
    ``W_coef[i]`` multiplies ``W_i*[n]`` (already negated, i.e. ``-a_i``).
    """
    A = np.zeros((layout.dim, layout.dim))
    n = layout.n_bus
    slack = set(layout.slack)
    wc = layout.w_col
    qc = layout.q_col
    for i in range(n):
        r = 2 * i
        if i in slack:
            A[r, r] = 1.0
            A[r + 1, r + 1] = 1.0
            continue
        for k in np.flatnonzero(Y[i]):
            _add_complex(A, r, 2 * k, complex(Y[i, k]))
        if i in wc:
            _add_complex(A, r, wc[i], complex(W_coef.get(i, 0.0)), conj=True)
        if i in qc:
            c = complex(Q_coef[i])
            A[r, qc[i]] += c.real
            A[r + 1, qc[i]] += c.imag
    for i in layout.aug:
        r = wc[i]
        _add_complex(A, r, 2 * i, complex(W0[i]))
        _add_complex(A, r, wc[i], complex(V0[i]))
    for i in layout.pv:
        r = qc[i]
        A[r, 2 * i] = V0[i].real
        A[r, 2 * i + 1] = V0[i].imag
    return A


def pack_rhs(layout: SystemLayout, balance: np.ndarray, recip: np.ndarray | None,
             magnitude: np.ndarray | None) -> np.ndarray:
    """Real right-hand sides from complex per-bus rows.

    ``balance`` is (n_bus, k) complex (slack entries are the pinned values),
    ``recip`` is (len(aug), k) complex and ``magnitude`` is (len(pv), k) real.
    """
    balance = np.atleast_2d(balance)
    k = balance.shape[1]
    B = np.zeros((layout.dim, k))
    B[0:2 * layout.n_bus:2] = balance.real
    B[1:2 * layout.n_bus:2] = balance.imag
    base = 2 * layout.n_bus
    if layout.aug:
        B[base:base + 2 * len(layout.aug):2] = recip.real
        B[base + 1:base + 2 * len(layout.aug):2] = recip.imag
    base += 2 * len(layout.aug)
    if layout.pv:
        B[base:base + len(layout.pv)] = magnitude
    return B


def unpack(layout: SystemLayout, X: np.ndarray):
    """Split real solutions into (V (n_bus, k), W (len(aug), k), Q (len(pv), k))."""
    X = X.reshape(layout.dim, -1)
    n = layout.n_bus
    V = X[0:2 * n:2] + 1j * X[1:2 * n:2]
    base = 2 * n
    na = len(layout.aug)
    W = X[base:base + 2 * na:2] + 1j * X[base + 1:base + 2 * na:2]
    Q = X[base + 2 * na:]
    return V, W, Q
