"""Conventional single-dimension holomorphic embedding with the flat 1∠0 germ.

Kept as a background method and cross-check for the multi-dimensional engine.
The admittance matrix is split into a zero-row-sum series part and a shunt
part so that all voltages equal 1 at s = 0 for the no-load, no-shunt
network; the shunts and all injections are then ramped in with ``s``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mpseries import get_index_set, update_reciprocal
from .network import AdmittanceMatrix, BusKind, NetworkCase, build_ybus
from .numeric import factorize, solve_many


@dataclass(frozen=True)
class Helm1DSolution:
    V_series: np.ndarray  # (n_bus, order + 1)
    W_series: np.ndarray
    Q_series: np.ndarray  # (n_pv, order + 1), net reactive injection
    pv: tuple[int, ...]
    tail: float
    converged: bool
    message: str = ""

    @property
    def order(self) -> int:
        return self.V_series.shape[1] - 1

    def V(self, s: float = 1.0) -> np.ndarray:
        powers = s ** np.arange(self.order + 1)
        return self.V_series @ powers

    def Q(self, s: float = 1.0) -> np.ndarray:
        powers = s ** np.arange(self.order + 1)
        return self.Q_series @ powers


def helm_solve(case: NetworkCase, Y: AdmittanceMatrix | None = None, n_max: int = 30,
               tol: float = 1e-10) -> Helm1DSolution:
    Y = build_ybus(case) if Y is None else Y
    n = case.n_bus
    sl = case.slack
    pv = case.pv
    is_pv = np.zeros(n, dtype=bool)
    is_pv[pv] = True
    Ytr = Y.Y_tr

    # columns: 2k -> Re V_k (Q_k for PV buses), 2k+1 -> Im V_k
    A = np.zeros((2 * n, 2 * n))
    for i in range(n):
        r = 2 * i
        if i == sl:
            A[r, r] = A[r + 1, r + 1] = 1.0
            continue
        for k in range(n):
            g, b = Ytr[i, k].real, Ytr[i, k].imag
            if not is_pv[k]:
                A[r, 2 * k] += g
                A[r + 1, 2 * k] += b
            A[r, 2 * k + 1] -= b
            A[r + 1, 2 * k + 1] += g
        if is_pv[i]:
            A[r + 1, 2 * i] += 1.0  # + j Q_i[n] W_i*[0], W[0] = 1
    F = factorize(A)

    iset = get_index_set(1, n_max)
    V = np.zeros((n, n_max + 1), dtype=complex)
    W = np.zeros((n, n_max + 1), dtype=complex)
    Q = np.zeros((n, n_max + 1))
    V[:, 0] = W[:, 0] = 1.0
    S_conj = np.conj(case.injections())
    P = case.injections().real
    b_sl = case.buses[sl]
    V_sl = b_sl.v_setpoint * np.exp(1j * b_sl.v_angle)
    vsp2 = np.array([b.v_setpoint ** 2 for b in case.buses])
    pq_mask = np.array([b.kind is BusKind.PQ for b in case.buses])

    tails = []
    for m in range(1, n_max + 1):
        interior = iset.degree_pairs(m, interior=True)
        # PV real parts from the magnitude constraint
        vv = interior.apply(V, np.conj(V))[:, 0].real
        v_re = (0.5 * (vsp2 - 1.0) if m == 1 else 0.0) - 0.5 * vv
        rhs = np.zeros(n, dtype=complex)
        shunt = Y.Y_sh * V[:, m - 1]
        rhs[pq_mask] = S_conj[pq_mask] * np.conj(W[pq_mask, m - 1]) - shunt[pq_mask]
        qw = interior.apply(Q, np.conj(W))[:, 0]
        rhs[is_pv] = P[is_pv] * np.conj(W[is_pv, m - 1]) - 1j * qw[is_pv] - shunt[is_pv]
        rhs -= Ytr[:, is_pv] @ v_re[is_pv]
        rhs[sl] = (V_sl - 1.0) if m == 1 else 0.0
        B = np.empty(2 * n)
        B[0::2] = rhs.real
        B[1::2] = rhs.imag
        x = solve_many(F, B)
        re, im = x[0::2], x[1::2]
        V[:, m] = np.where(is_pv, v_re, re) + 1j * im
        V[sl, m] = rhs[sl]
        Q[:, m] = np.where(is_pv, re, 0.0)
        update_reciprocal(W, V, iset, m)
        tails.append(float(max(np.max(np.abs(V[:, m])), np.max(np.abs(Q[:, m])))))
        if tails[-1] < tol:
            break

    order = len(tails)
    converged = tails[-1] < tol
    message = "" if converged else (
        f"tail {tails[-1]:.3e} above {tol:.1e} after {order} orders; "
        "the series may be outside its convergence region at s = 1")
    return Helm1DSolution(
        V_series=V[:, :order + 1], W_series=W[:, :order + 1], Q_series=Q[pv, :order + 1],
        pv=tuple(pv), tail=tails[-1], converged=converged, message=message,
    )
