"""Physical germ solution: the no-load operating point with PV buses at set active power and voltage.

Step 1 propagates the slack voltage through the passive network with every
other bus at zero injection (point A). Step 2 runs a one-dimensional
embedding in ``s`` that ramps the PV active powers from zero to their set
values and the PV voltage magnitudes from their point-A values to the
set points, and sums the series at ``s = 1`` (point B).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import embedding
from .mpseries import get_index_set, update_reciprocal
from .network import AdmittanceMatrix, BusKind, NetworkCase, build_ybus
from .numeric import SingularMatrixError, factorize, solve_many

log = logging.getLogger(__name__)


class GermError(RuntimeError):
    """Germ computation failed (singular network, non-convergence, constraint miss)."""


@dataclass(frozen=True)
class GermSolution:
    V_ST: np.ndarray
    V0: np.ndarray
    W0: np.ndarray
    Q0: np.ndarray  # net reactive injection per PV bus, in ``pv`` order
    pv: tuple[int, ...]
    tail: float
    tails: tuple[float, ...] = ()
    V_series: np.ndarray | None = field(default=None, repr=False)
    Q_series: np.ndarray | None = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return len(self.tails)

    def q0(self, bus: int) -> float:
        return float(self.Q0[self.pv.index(bus)])

    def to_dict(self) -> dict:
        def cplx(a):
            return [[float(z.real), float(z.imag)] for z in np.asarray(a)]
        return {
            "V_ST": cplx(self.V_ST),
            "V0": cplx(self.V0),
            "W0": cplx(self.W0),
            "Q0": [float(q) for q in self.Q0],
            "pv": list(self.pv),
            "tail": self.tail,
            "tails": list(self.tails),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GermSolution:
        def cplx(a):
            return np.array([complex(re, im) for re, im in a], dtype=complex)
        return cls(
            V_ST=cplx(d["V_ST"]), V0=cplx(d["V0"]), W0=cplx(d["W0"]),
            Q0=np.array(d["Q0"], dtype=float), pv=tuple(d["pv"]),
            tail=float(d["tail"]), tails=tuple(d["tails"]),
        )


def _check_connected(case: NetworkCase) -> None:
    adj: dict[int, set[int]] = {b.id: set() for b in case.buses}
    for br in case.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen = {case.buses[case.slack].id}
    stack = list(seen)
    while stack:
        for nb in adj[stack.pop()] - seen:
            seen.add(nb)
            stack.append(nb)
    cut = [b.id for b in case.buses if b.id not in seen]
    if cut:
        raise GermError(f"buses {cut} are not connected to the slack bus; "
                        "the network system is singular")


def germ_step1(Y: AdmittanceMatrix, case: NetworkCase) -> np.ndarray:
    """Point-A voltages: slack pinned, zero current injection everywhere else."""
    _check_connected(case)
    layout = embedding.SystemLayout(case.n_bus, (case.slack,), (), ())
    n = case.n_bus
    A = embedding.assemble(Y.Y, layout, np.ones(n, complex), np.ones(n, complex), {}, {})
    try:
        F = factorize(A)
    except SingularMatrixError as exc:
        bus = case.buses[exc.row // 2].id if exc.row < 2 * n else None
        raise GermError(f"step-1 network system is singular near bus {bus}; "
                        "is a bus isolated from the slack?") from exc
    rhs = np.zeros(n, dtype=complex)
    sl = case.buses[case.slack]
    rhs[case.slack] = sl.v_setpoint * np.exp(1j * sl.v_angle)
    V, _, _ = embedding.unpack(layout, solve_many(F, embedding.pack_rhs(layout, rhs[:, None], None, None)))
    V = V[:, 0]
    V[case.slack] = rhs[case.slack]  # pinned row; drop LU round-off
    return V


def germ_step2(Y: AdmittanceMatrix, case: NetworkCase, V_ST: np.ndarray,
               n_max: int = 40, tol: float = 1e-10) -> GermSolution:
    """Ramp PV buses from point A to their set points and sum the series at s = 1."""
    n = case.n_bus
    pv = tuple(case.pv)
    layout = embedding.SystemLayout(n, (case.slack,), pv, pv)
    for i in pv:
        if abs(V_ST[i]) == 0:
            raise GermError(f"PV bus {case.buses[i].id} has zero point-A voltage")
    W_ST = 1.0 / V_ST
    A = embedding.assemble(
        Y.Y, layout, V_ST, W_ST,
        Q_coef={i: 1j * np.conj(W_ST[i]) for i in pv},
        W_coef={},  # Q[0] = 0 at point A, so W*[n] has no same-order coefficient
    )
    try:
        F = factorize(A)
    except SingularMatrixError as exc:
        raise GermError(f"germ step-2 system is singular (row {exc.row})") from exc

    iset = get_index_set(1, n_max)
    V = np.zeros((n, n_max + 1), dtype=complex)
    W = np.zeros((n, n_max + 1), dtype=complex)
    Q = np.zeros((len(pv), n_max + 1))
    V[:, 0] = V_ST
    W[:, 0] = W_ST
    pv_idx = list(pv)
    P_pv = np.array([case.buses[i].p_injection for i in pv])
    mag_step = np.array([case.buses[i].v_setpoint ** 2 - abs(V_ST[i]) ** 2 for i in pv])
    fixed = [i for i, b in enumerate(case.buses) if b.is_fixed]
    S_fixed_conj = np.array([np.conj(case.injections()[i]) for i in fixed])
    others = np.array([i for i in range(n) if i not in pv], dtype=int)

    tails = []
    for m in range(1, n_max + 1):
        interior = iset.degree_pairs(m, interior=True)
        balance = np.zeros((n, 1), dtype=complex)
        if fixed:
            balance[fixed, 0] = S_fixed_conj * np.conj(W[fixed, m - 1])
        recip = magnitude = None
        if pv:
            qw = interior.apply(Q, np.conj(W[pv_idx]))[:, 0]
            balance[pv_idx, 0] = P_pv * np.conj(W[pv_idx, m - 1]) - 1j * qw
            recip = -interior.apply(W[pv_idx], V[pv_idx])
            vv = interior.apply(V[pv_idx], np.conj(V[pv_idx]))[:, 0].real
            c = mag_step if m == 1 else 0.0
            magnitude = (0.5 * (c - vv))[:, None]
        X = solve_many(F, embedding.pack_rhs(layout, balance, recip, magnitude))
        Vn, Wn, Qn = embedding.unpack(layout, X)
        V[:, m] = Vn[:, 0]
        V[case.slack, m] = 0.0
        if pv:
            W[pv_idx, m] = Wn[:, 0]
            Q[:, m] = Qn[:, 0]
        if len(others):
            Wo = W[others]
            update_reciprocal(Wo, V[others], iset, m)
            W[others] = Wo
        tail = max(np.max(np.abs(V[:, m])), np.max(np.abs(Q[:, m]), initial=0.0))
        tails.append(float(tail))
        if not np.isfinite(tail):
            raise GermError(f"germ series became non-finite at order {m}")
        if tail < tol:
            break
    else:
        raise GermError(f"germ series did not converge: tail {tails[-1]:.3e} > {tol:.1e} "
                        f"after {n_max} orders")
    order = len(tails)
    if order >= 4 and not (tails[-1] <= tails[-2] <= tails[-3]):
        log.warning("germ tail not monotone over the last orders: %s", tails[-3:])

    V0 = V[:, :order + 1].sum(axis=1)
    Q0 = Q[:, :order + 1].sum(axis=1)
    for j, i in enumerate(pv):
        dev = abs(abs(V0[i]) - case.buses[i].v_setpoint)
        if dev > 1e-8:
            raise GermError(f"PV bus {case.buses[i].id} germ magnitude misses set point by {dev:.2e}")
    return GermSolution(
        V_ST=V_ST, V0=V0, W0=1.0 / V0, Q0=Q0, pv=pv, tail=tails[-1], tails=tuple(tails),
        V_series=V[:, :order + 1], Q_series=Q[:, :order + 1],
    )


def compute_germ(case: NetworkCase, Y: AdmittanceMatrix | None = None,
                 n_max: int = 40, tol: float = 1e-10) -> GermSolution:
    Y = build_ybus(case) if Y is None else Y
    return germ_step2(Y, case, germ_step1(Y, case), n_max=n_max, tol=tol)


def germ_residuals(case: NetworkCase, Y: AdmittanceMatrix, germ: GermSolution) -> dict[str, float]:
    """Worst germ feasibility violations by bus class."""
    V = germ.V0
    S = V * np.conj(Y.Y @ V)
    spec = case.injections()
    out = {"pq_injection": 0.0, "pv_magnitude": 0.0, "pv_active": 0.0, "slack": 0.0}
    for i, b in enumerate(case.buses):
        if b.kind is BusKind.PQ:
            target = spec[i] if b.is_fixed else 0.0
            out["pq_injection"] = max(out["pq_injection"], abs(S[i] - target))
        elif b.kind is BusKind.PV:
            out["pv_magnitude"] = max(out["pv_magnitude"], abs(abs(V[i]) - b.v_setpoint))
            out["pv_active"] = max(out["pv_active"], abs(S[i].real - b.p_injection))
        else:
            out["slack"] = abs(V[i] - b.v_setpoint * np.exp(1j * b.v_angle))
    return out
