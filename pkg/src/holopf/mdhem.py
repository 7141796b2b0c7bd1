"""Multi-dimensional holomorphic embedding engine.

Each loading scale ``s_k`` multiplies the active and/or reactive injection of
one load bus or a group of load buses. Starting from the physical germ, the
bus voltages are expanded as truncated multivariate power series in the
scales; every order is obtained from one real linear solve per multi-index
against a single factorization of the order-independent system matrix.

PV buses carry three extra unknowns per multi-index (complex ``W`` and real
``Q``); buses converted from PV to PQ at a reactive limit carry a complex
``W`` because their fixed injection multiplies ``W*`` at the same order.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import embedding
from .germ import GermSolution, compute_germ
from .mpseries import (
    IndexSet, MPSeries, conj_coeffs, conv_at, get_index_set, monomials,
    update_reciprocal,
)
from .network import AdmittanceMatrix, BusKind, CaseError, NetworkCase, build_ybus
from .nr_oracle import PFSolution
from .numeric import SingularMatrixError, factorize, solve_many

log = logging.getLogger(__name__)


class MDHEMError(RuntimeError):
    pass


class LimitLoopError(MDHEMError):
    def __init__(self, message: str, conversions: list):
        super().__init__(message)
        self.conversions = conversions


# ---------------------------------------------------------------------------
# scale assignment

@dataclass(frozen=True)
class ScaleAssignment:
    """Maps the P and Q injection of load buses to scale dimensions (0-based)."""

    names: tuple[str, ...]
    p_dim: tuple[tuple[int, int], ...]
    q_dim: tuple[tuple[int, int], ...]

    @property
    def D(self) -> int:
        return len(self.names)

    @property
    def p_map(self) -> dict[int, int]:
        return dict(self.p_dim)

    @property
    def q_map(self) -> dict[int, int]:
        return dict(self.q_dim)

    def validate(self, case: NetworkCase) -> None:
        if self.D < 1:
            raise CaseError("scale assignment needs at least one dimension")
        used = set()
        for label, pairs in (("P", self.p_dim), ("Q", self.q_dim)):
            seen = set()
            for bus_id, k in pairs:
                if bus_id in seen:
                    raise CaseError(f"bus {bus_id} {label} assigned twice")
                seen.add(bus_id)
                try:
                    b = case.bus(bus_id)
                except KeyError:
                    raise CaseError(f"scale assignment names unknown bus {bus_id}") from None
                if b.kind is not BusKind.PQ or b.is_fixed:
                    raise CaseError(f"bus {bus_id} is not a scalable load bus")
                if not 0 <= k < self.D:
                    raise CaseError(f"bus {bus_id} {label} assigned to missing dimension {k}")
                used.add(k)
        missing = set(range(self.D)) - used
        if missing:
            raise CaseError(f"dimensions {sorted(self.names[k] for k in missing)} control nothing")
        pm, qm = self.p_map, self.q_map
        for b in case.buses:
            if b.kind is BusKind.PQ and not b.is_fixed:
                if b.p_injection != 0 and b.id not in pm:
                    raise CaseError(f"active load at bus {b.id} is not assigned to a scale")
                if b.q_injection != 0 and b.id not in qm:
                    raise CaseError(f"reactive load at bus {b.id} is not assigned to a scale")

    def to_dict(self) -> dict:
        out = {name: [] for name in self.names}
        for bus_id, k in self.p_dim:
            out[self.names[k]].append([bus_id, "P"])
        for bus_id, k in self.q_dim:
            out[self.names[k]].append([bus_id, "Q"])
        return out

    def digest(self) -> str:
        blob = json.dumps({"names": list(self.names), "p": self.p_dim, "q": self.q_dim},
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, mapping: dict) -> ScaleAssignment:
        """Build from ``{name: [[bus, "P"|"Q"|"PQ"], bus, ...]}``; a bare bus id means both."""
        names = tuple(mapping)
        p, q = [], []
        for k, name in enumerate(names):
            targets = mapping[name]
            if not isinstance(targets, (list, tuple)):
                raise CaseError(f"scale {name!r}: expected a list of targets")
            for t in targets:
                if isinstance(t, (list, tuple)):
                    bus_id, what = int(t[0]), str(t[1]).upper()
                else:
                    bus_id, what = int(t), "PQ"
                if what not in ("P", "Q", "PQ"):
                    raise CaseError(f"scale {name!r}: target kind must be P, Q or PQ, got {what!r}")
                if "P" in what:
                    p.append((bus_id, k))
                if "Q" in what:
                    q.append((bus_id, k))
        return cls(names, tuple(sorted(p)), tuple(sorted(q)))

    @classmethod
    def per_bus(cls, case: NetworkCase) -> ScaleAssignment:
        """One scale per loaded PQ bus controlling both its P and Q."""
        loaded = [b.id for b in case.buses if b.kind is BusKind.PQ and not b.is_fixed
                  and (b.p_injection != 0 or b.q_injection != 0)]
        return cls.from_mapping({f"s{k + 1}": [[bid, "PQ"]] for k, bid in enumerate(loaded)})

    @classmethod
    def single(cls, case: NetworkCase) -> ScaleAssignment:
        """All loads on one scale."""
        loaded = [b.id for b in case.buses if b.kind is BusKind.PQ and not b.is_fixed
                  and (b.p_injection != 0 or b.q_injection != 0)]
        return cls.from_mapping({"s1": [[bid, "PQ"] for bid in loaded]})

    @classmethod
    def from_areas(cls, case: NetworkCase) -> ScaleAssignment:
        """One scale per case area over the loaded PQ buses it contains."""
        mapping = {}
        for k, (name, members) in enumerate(case.areas.items()):
            loads = []
            for bid in members:
                b = case.bus(bid)
                if b.kind is BusKind.PQ and not b.is_fixed and (b.p_injection or b.q_injection):
                    loads.append([bid, "PQ"])
            mapping[name] = loads
        return cls.from_mapping(mapping)


def scaled_injections(case: NetworkCase, scales: ScaleAssignment, s) -> np.ndarray:
    """Net complex injection per bus at scale point ``s``."""
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.shape != (scales.D,):
        raise ValueError(f"expected {scales.D} scale values, got {s.shape[0]}")
    S = case.injections()
    pm, qm = scales.p_map, scales.q_map
    for i, b in enumerate(case.buses):
        if b.kind is BusKind.PQ and not b.is_fixed:
            p = b.p_injection * s[pm[b.id]] if b.id in pm else 0.0
            q = b.q_injection * s[qm[b.id]] if b.id in qm else 0.0
            S[i] = complex(p, q)
    return S


# ---------------------------------------------------------------------------
# artifact

@dataclass(frozen=True)
class QViolation:
    bus: int
    side: str  # "max" or "min"
    q_gen: float
    limit: float

    @property
    def excess(self) -> float:
        return self.q_gen - self.limit if self.side == "max" else self.limit - self.q_gen


@dataclass(frozen=True, eq=False)
class MDHEMArtifact:
    """Solved multivariate series for every bus of one case and scale assignment.

    ``V`` and ``W`` are (n_bus, n_term) complex; ``Q`` is (n_pv, n_term) real
    net reactive injection in ``pv`` bus order.
    """

    case: NetworkCase
    scales: ScaleAssignment
    index_set: IndexSet
    V: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    germ: GermSolution
    tails: tuple[float, ...] = ()
    conversions: tuple[dict, ...] = ()
    warnings: tuple[str, ...] = ()
    source_digest: str = ""
    passes: int = 1

    @property
    def M(self) -> int:
        return self.index_set.M

    @property
    def D(self) -> int:
        return self.index_set.D

    @property
    def pv(self) -> tuple[int, ...]:
        return tuple(self.case.pv)

    @cached_property
    def ybus(self) -> AdmittanceMatrix:
        return build_ybus(self.case)

    @cached_property
    def case_digest(self) -> str:
        return self.case.digest()

    def v_series(self, bus_id: int) -> MPSeries:
        return MPSeries(self.index_set, self.V[self.case.index_of(bus_id)])

    def w_series(self, bus_id: int) -> MPSeries:
        return MPSeries(self.index_set, self.W[self.case.index_of(bus_id)])

    def q_series(self, bus_id: int) -> MPSeries:
        i = self.case.index_of(bus_id)
        if i not in self.pv:
            raise KeyError(f"bus {bus_id} is not a PV bus of this artifact")
        j = self.pv.index(i)
        return MPSeries(self.index_set, self.Q[j].astype(complex), real=True)

    def evaluate(self, s) -> PFSolution:
        return evaluate_artifact(self, s)


def _layout(case: NetworkCase) -> embedding.SystemLayout:
    pv = tuple(case.pv)
    fixed = tuple(i for i, b in enumerate(case.buses) if b.is_fixed)
    return embedding.SystemLayout(case.n_bus, (case.slack,), pv, pv + fixed)


def assemble_lhs(case: NetworkCase, Y: AdmittanceMatrix, germ: GermSolution):
    """Order-independent real system matrix and its layout.

    The dimension is ``2s + 2p + 5v`` plus 2 per converted (fixed-injection) bus.
    """
    layout = _layout(case)
    S = case.injections()
    q0 = dict(zip(germ.pv, germ.Q0))
    W_coef = {}
    for i in layout.aug:
        b = case.buses[i]
        a = complex(b.p_injection, -q0[i]) if b.kind is BusKind.PV else np.conj(S[i])
        W_coef[i] = -a
    Q_coef = {i: 1j * np.conj(germ.W0[i]) for i in layout.pv}
    A = embedding.assemble(Y.Y, layout, germ.V0, germ.W0, Q_coef, W_coef)
    return A, layout


def _pq_terms(case: NetworkCase, scales: ScaleAssignment):
    """(bus index, dimension, complex factor) for every scaled load term."""
    terms = []
    pm, qm = scales.p_map, scales.q_map
    for i, b in enumerate(case.buses):
        if b.kind is BusKind.PQ and not b.is_fixed:
            if b.id in pm and b.p_injection != 0:
                terms.append((i, pm[b.id], complex(b.p_injection)))
            if b.id in qm and b.q_injection != 0:
                terms.append((i, qm[b.id], -1j * b.q_injection))
    return terms


def _rhs_block(case, layout, terms, iset, V, W, Q, m) -> np.ndarray:
    sl = iset.degree_slice(m)
    k = sl.stop - sl.start
    balance = np.zeros((case.n_bus, k), dtype=complex)
    dec = iset.decrement[sl]
    for i, dim, factor in terms:
        ranks = dec[:, dim]
        ok = ranks >= 0
        balance[i, ok] += factor * np.conj(W[i, ranks[ok]])
    recip = magnitude = None
    interior = iset.degree_pairs(m, interior=True)
    pv = list(layout.pv)
    aug = list(layout.aug)
    if pv:
        balance[pv] = -1j * interior.apply(Q, np.conj(W[pv]))
        magnitude = -0.5 * interior.apply(V[pv], np.conj(V[pv])).real
    if aug:
        recip = -interior.apply(W[aug], V[aug])
    return embedding.pack_rhs(layout, balance, recip, magnitude)


def rhs_for_index(artifact: MDHEMArtifact, n) -> np.ndarray:
    """Right-hand side of the system for multi-index ``n``, from sealed lower orders.

    Reference path built on :func:`conv_at`; ``n`` must lie in the artifact's index set.
    """
    case = artifact.case
    iset = artifact.index_set
    n = tuple(int(v) for v in n)
    r = iset.rank(n)
    if r == 0:
        raise ValueError("order 0 is supplied by the germ")
    layout = _layout(case)
    ser = lambda a: MPSeries(iset, a)  # noqa: E731
    balance = np.zeros(case.n_bus, dtype=complex)
    for i, dim, factor in _pq_terms(case, artifact.scales):
        if n[dim] > 0:
            lower = n[:dim] + (n[dim] - 1,) + n[dim + 1:]
            balance[i] += factor * np.conj(artifact.W[i, iset.rank(lower)])
    recip = np.zeros(len(layout.aug), dtype=complex)
    magnitude = np.zeros(len(layout.pv))
    for j, i in enumerate(layout.pv):
        Qs = MPSeries(iset, artifact.Q[j].astype(complex))
        Ws, Vs = ser(artifact.W[i]), ser(artifact.V[i])
        balance[i] = -1j * conv_at(Qs, conj_coeffs(Ws), n, lo_excl=True, hi_excl=True)
        magnitude[j] = -0.5 * conv_at(Vs, conj_coeffs(Vs), n, lo_excl=True, hi_excl=True).real
    for j, i in enumerate(layout.aug):
        recip[j] = -conv_at(ser(artifact.W[i]), ser(artifact.V[i]), n, lo_excl=True, hi_excl=True)
    return embedding.pack_rhs(layout, balance[:, None], recip[:, None], magnitude[:, None])[:, 0]


def run(case: NetworkCase, scales: ScaleAssignment, M_max: int = 12, tol: float = 1e-8,
        germ: GermSolution | None = None, Y: AdmittanceMatrix | None = None,
        source_digest: str = "") -> MDHEMArtifact:
    """Solve the multivariate series through order ``M_max`` (or until the order tail < tol)."""
    scales.validate(case)
    Y = build_ybus(case) if Y is None else Y
    germ = compute_germ(case, Y) if germ is None else germ
    A, layout = assemble_lhs(case, Y, germ)
    try:
        F = factorize(A)
    except SingularMatrixError as exc:
        bus = case.buses[exc.row // 2].id if exc.row < 2 * case.n_bus else None
        raise MDHEMError(f"embedding matrix is singular near bus {bus} (row {exc.row})") from exc

    iset = get_index_set(scales.D, M_max)
    T = len(iset)
    n = case.n_bus
    V = np.zeros((n, T), dtype=complex)
    W = np.zeros((n, T), dtype=complex)
    Q = np.zeros((len(layout.pv), T))
    V[:, 0] = germ.V0
    W[:, 0] = germ.W0
    Q[:, 0] = [germ.q0(i) for i in layout.pv]
    aug = list(layout.aug)
    others = [i for i in range(n) if i not in layout.aug]
    terms = _pq_terms(case, scales)

    tails: list[float] = []
    warnings: list[str] = []
    M = 0
    for m in range(1, M_max + 1):
        sl = iset.degree_slice(m)
        X = solve_many(F, _rhs_block(case, layout, terms, iset, V, W, Q, m))
        Vn, Wn, Qn = embedding.unpack(layout, X)
        V[:, sl] = Vn
        V[case.slack, sl] = 0.0
        if aug:
            W[aug, sl] = Wn
        if layout.pv:
            Q[:, sl] = Qn
        if others:
            Wo = W[others]
            update_reciprocal(Wo, V[others], iset, m)
            W[others] = Wo
        tail = max(np.max(np.abs(Vn)), np.max(np.abs(Qn), initial=0.0))
        tails.append(float(tail))
        M = m
        if len(tails) >= 4 and tails[-1] > tails[-2] > tails[-3] > tails[-4]:
            msg = f"series tail grew over 3 consecutive orders (order {m}: {tail:.3e})"
            if msg not in warnings:
                warnings.append(msg)
                log.warning(msg)
        if tail < tol:
            break

    iset = iset.prefix(M)
    T = len(iset)
    return MDHEMArtifact(
        case=case, scales=scales, index_set=iset,
        V=V[:, :T].copy(), W=W[:, :T].copy(), Q=Q[:, :T].copy(),
        germ=germ, tails=tuple(tails), warnings=tuple(warnings),
        source_digest=source_digest or case.digest(),
    )


def evaluate_artifact(artifact: MDHEMArtifact, s) -> PFSolution:
    """Plug scale values into every series; attach the worst power-flow residual."""
    s = np.asarray(s, dtype=float).reshape(-1)
    mono = monomials(artifact.index_set, s)
    V = artifact.V @ mono
    Y = artifact.ybus.Y
    S = V * np.conj(Y @ V)
    case = artifact.case
    spec = scaled_injections(case, artifact.scales, s)
    q_net = artifact.Q @ mono if artifact.pv else np.zeros(0)
    q_gen = {}
    resid = 0.0
    for i, b in enumerate(case.buses):
        if b.kind is BusKind.PQ:
            resid = max(resid, abs(S[i] - spec[i]))
        elif b.kind is BusKind.PV:
            resid = max(resid, abs(S[i].real - spec[i].real), abs(abs(V[i]) - b.v_setpoint))
    for j, i in enumerate(artifact.pv):
        q_gen[case.buses[i].id] = float(q_net[j] + case.buses[i].q_load)
    return PFSolution(V=V, S=S, q_gen=q_gen, residual=float(resid),
                      converged=bool(np.isfinite(resid)),
                      meta={"s": s.tolist(), "order": artifact.M})


def _violations(case: NetworkCase, q_gen: dict[int, float]) -> list[QViolation]:
    out = []
    for bus_id, qg in q_gen.items():
        b = case.bus(bus_id)
        if qg > b.q_max:
            out.append(QViolation(bus_id, "max", qg, b.q_max))
        elif qg < b.q_min:
            out.append(QViolation(bus_id, "min", qg, b.q_min))
    return out


def check_q_limits(artifact: MDHEMArtifact, s) -> list[QViolation]:
    """PV buses whose evaluated reactive output lies outside its limits at ``s``."""
    if not artifact.pv:
        return []
    return _violations(artifact.case, evaluate_artifact(artifact, s).q_gen)


def solve_with_limits(case: NetworkCase, scales: ScaleAssignment, target_s, M_max: int = 12,
                      tol: float = 1e-8, max_conversions: int | None = None):
    """Run the embedding, converting the worst limit-violating PV bus to PQ until none remain.

    Returns ``(artifact, conversions)``. Converted buses never revert to PV.
    """
    source = case.digest()
    cap = 2 * len(case.pv) if max_conversions is None else max_conversions
    conversions: list[dict] = []
    passes = 0
    while True:
        Y = build_ybus(case)
        germ = compute_germ(case, Y)
        q_germ = {case.buses[i].id: germ.q0(i) + case.buses[i].q_load for i in case.pv}
        viol = _violations(case, q_germ)
        stage = "germ"
        artifact = None
        if not viol:
            artifact = run(case, scales, M_max, tol, germ=germ, Y=Y, source_digest=source)
            passes += 1
            viol = check_q_limits(artifact, target_s)
            stage = "target"
        if not viol:
            break
        if len(conversions) >= cap:
            raise LimitLoopError(f"limit loop exceeded {cap} conversions", conversions)
        worst = max(viol, key=lambda v: v.excess)
        conversions.append({"pass": passes, "stage": stage, "bus": worst.bus, "side": worst.side,
                            "q_gen": worst.q_gen, "limit": worst.limit})
        log.info("bus %d exceeds q_%s (%.6g vs %.6g) at %s; converting to PQ",
                 worst.bus, worst.side, worst.q_gen, worst.limit, stage)
        case = case.convert_pv_to_pq(worst.bus, worst.limit)
    out = MDHEMArtifact(
        case=artifact.case, scales=artifact.scales, index_set=artifact.index_set,
        V=artifact.V, W=artifact.W, Q=artifact.Q, germ=artifact.germ, tails=artifact.tails,
        conversions=tuple(conversions), warnings=artifact.warnings,
        source_digest=source, passes=passes,
    )
    return out, conversions


# ---------------------------------------------------------------------------
# resources

_SATURATE = 2**63 - 1


@dataclass(frozen=True)
class ResourceReport:
    D: int
    M: int
    lhs_dim: int
    columns_per_order: int
    terms_per_series: int
    conv_multiplies: int
    lhs_bytes: int
    unknown_bytes: int
    rhs_bytes: int
    series_bytes: int
    saturated: bool = False
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "notes"}


def estimate_resources(D: int, M: int, s: int, p: int, v: int) -> ResourceReport:
    """Matrix sizes, series storage and convolution multiply count for order ``M``."""
    if min(D - 1, M, s, p, v) < 0:
        raise ValueError("counts must be non-negative and D >= 1")
    dim = 2 * s + 2 * p + 5 * v
    cols = math.comb(M + D - 1, M)
    terms = math.comb(M + D, M)
    mults = (p + 3 * v) * cols * max((M - 1) ** D - 1, 0)
    raw = {
        "lhs_dim": dim,
        "columns_per_order": cols,
        "terms_per_series": terms,
        "conv_multiplies": mults,
        "lhs_bytes": dim * dim * 8,
        "unknown_bytes": dim * cols * 8,
        "rhs_bytes": dim * cols * 8,
        # V and W complex per bus, Q real per PV bus
        "series_bytes": terms * 8 * (4 * (s + p + v) + v),
    }
    saturated = any(val > _SATURATE for val in raw.values())
    clipped = {k: min(val, _SATURATE) for k, val in raw.items()}
    return ResourceReport(D=D, M=M, saturated=saturated, **clipped)
