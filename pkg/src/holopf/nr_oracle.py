"""Polar Newton-Raphson power flow, used as the independent verification oracle.

Non-convergence is reported as a :class:`Divergence` value rather than an
exception: an iterative method failing does not prove that no solution exists.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .network import BusKind, NetworkCase, build_ybus


class Start(str, enum.Enum):
    FLAT = "flat"
    GERM = "germ"
    GIVEN = "given"


@dataclass(frozen=True)
class NRConfig:
    tol: float = 1e-10
    max_iter: int = 50
    start: Start = Start.FLAT
    enforce_q_limits: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class PFSolution:
    """Bus voltages and injections of one operating point.

    ``q_gen`` maps PV bus ids (of the solved case) to generator reactive output.
    """

    V: np.ndarray
    S: np.ndarray
    q_gen: dict[int, float]
    residual: float
    converged: bool = True
    iterations: int = 0
    switched: tuple[tuple[int, str, float], ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.V)

    @property
    def va(self) -> np.ndarray:
        return np.angle(self.V)


@dataclass(frozen=True)
class Divergence:
    reason: str
    iterations: int
    mismatch: float
    converged: bool = False


def _jacobian(Y, V, pvpq, pq):
    Ibus = Y @ V
    Vnorm = V / np.abs(V)
    dS_dVm = np.diag(V) @ np.conj(Y @ np.diag(Vnorm)) + np.diag(np.conj(Ibus) * Vnorm)
    dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Y @ np.diag(V))
    J11 = dS_dVa[np.ix_(pvpq, pvpq)].real
    J12 = dS_dVm[np.ix_(pvpq, pq)].real
    J21 = dS_dVa[np.ix_(pq, pvpq)].imag
    J22 = dS_dVm[np.ix_(pq, pq)].imag
    return np.block([[J11, J12], [J21, J22]])


def _newton(Y, V, S_spec, pv, pq, tol, max_iter):
    pvpq = np.r_[pv, pq].astype(int)
    pq = np.asarray(pq, dtype=int)
    npvpq = len(pvpq)
    Vm = np.abs(V)
    Va = np.angle(V)
    for it in range(max_iter + 1):
        mis = V * np.conj(Y @ V) - S_spec
        F = np.r_[mis[pvpq].real, mis[pq].imag]
        norm = np.max(np.abs(F), initial=0.0)
        if not np.isfinite(norm):
            return None, it, norm, "non-finite mismatch"
        if norm < tol:
            return V, it, norm, ""
        if it == max_iter:
            break
        J = _jacobian(Y, V, pvpq, pq)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None, it, norm, "singular Jacobian"
        Va[pvpq] += dx[:npvpq]
        Vm[pq] += dx[npvpq:]
        V = Vm * np.exp(1j * Va)
    return None, max_iter, norm, f"no convergence in {max_iter} iterations"


def nr_solve(case: NetworkCase, injections: np.ndarray | None = None, cfg: NRConfig = NRConfig(),
             v_start: np.ndarray | None = None, Y: np.ndarray | None = None):
    """Solve the power flow of ``case`` with the given net complex injection per bus.

    ``injections`` defaults to the case's base injections. For PV buses only the
    real part is used; the slack entry is ignored. Returns :class:`PFSolution`
    or :class:`Divergence`.
    """
    Y = build_ybus(case).Y if Y is None else Y
    S_spec = case.injections() if injections is None else np.asarray(injections, dtype=complex).copy()
    n = case.n_bus
    kinds = [b.kind for b in case.buses]
    vsp = np.array([b.v_setpoint for b in case.buses])
    sl = case.slack
    V_sl = vsp[sl] * np.exp(1j * case.buses[sl].v_angle)

    start = Start(cfg.start)
    if start is Start.FLAT:
        V = np.ones(n, dtype=complex) * np.exp(1j * case.buses[sl].v_angle)
    elif v_start is not None:
        V = np.asarray(v_start, dtype=complex).copy()
    elif start is Start.GERM:
        from .germ import compute_germ
        V = compute_germ(case).V0.copy()
    else:
        raise ValueError("start='given' requires v_start")
    for i, k in enumerate(kinds):
        if k is BusKind.PV:
            V[i] = vsp[i] * np.exp(1j * np.angle(V[i]))
    V[sl] = V_sl

    pv = [i for i, k in enumerate(kinds) if k is BusKind.PV]
    pq = [i for i, k in enumerate(kinds) if k is BusKind.PQ]
    q_load = np.array([b.q_load for b in case.buses])
    orig_pv = list(pv)
    switched = []
    total_it = 0
    while True:
        Vs, it, norm, reason = _newton(Y, V, S_spec, pv, pq, cfg.tol, cfg.max_iter)
        total_it += it
        if Vs is None:
            return Divergence(reason, total_it, float(norm))
        V = Vs
        S = V * np.conj(Y @ V)
        if not cfg.enforce_q_limits or len(switched) >= len(orig_pv):
            break
        worst = None
        for i in pv:
            b = case.buses[i]
            qg = S[i].imag + q_load[i]
            for side, lim, excess in (("max", b.q_max, qg - b.q_max), ("min", b.q_min, b.q_min - qg)):
                if excess > 0 and (worst is None or excess > worst[3]):
                    worst = (i, side, lim, excess)
        if worst is None:
            break
        i, side, lim, _ = worst
        pv.remove(i)
        pq.append(i)
        S_spec[i] = complex(S_spec[i].real, lim - q_load[i])
        switched.append((case.buses[i].id, side, float(lim)))

    q_gen = {case.buses[i].id: float(S[i].imag + q_load[i]) for i in orig_pv}
    return PFSolution(V=V, S=S, q_gen=q_gen, residual=float(norm), iterations=total_it,
                      switched=tuple(switched))


# ---------------------------------------------------------------------------
# grid comparison against an embedding artifact

def grid_points(spec) -> np.ndarray:
    """Cartesian grid from per-dimension ``(lo, hi, step)`` triples, first dimension slowest.

    Values are ``lo + k * step`` for integer ``k``, never accumulated sums.
    """
    axes = []
    for lo, hi, step in spec:
        if not step > 0:
            raise ValueError("grid step must be positive")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        if count < 1:
            raise ValueError(f"empty grid axis {lo}:{hi}:{step}")
        axes.append(lo + np.arange(count) * step)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


@dataclass(frozen=True)
class ComparisonRow:
    s: np.ndarray
    nr: PFSolution | Divergence
    mdhem: PFSolution
    error: np.ndarray | None  # per-bus |V_mdhem - V_nr|, None where N-R diverged


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]

    @property
    def converged(self) -> list[ComparisonRow]:
        return [r for r in self.rows if r.error is not None]

    @property
    def n_diverged(self) -> int:
        return len(self.rows) - len(self.converged)

    @property
    def max_error(self) -> float | None:
        rows = self.converged
        return max(float(r.error.max()) for r in rows) if rows else None

    @property
    def mean_error(self) -> float | None:
        rows = self.converged
        return float(np.mean([r.error.max() for r in rows])) if rows else None

    def worst(self) -> tuple[np.ndarray, int] | None:
        """Grid point and bus index of the largest error."""
        rows = self.converged
        if not rows:
            return None
        r = max(rows, key=lambda r: r.error.max())
        return r.s, int(np.argmax(r.error))


def nr_grid_compare(case: NetworkCase, artifact, grid, cfg: NRConfig = NRConfig(),
                    threads: int = 1) -> ComparisonTable:
    """Solve N-R at every grid point and compare with the artifact's evaluation.

    ``grid`` is an (n_points, D) ndarray of points or a sequence of
    ``(lo, hi, step)`` triples. Divergent points are kept as markers and
    excluded from the statistics.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .mdhem import evaluate_artifact, scaled_injections

    digest = case.digest()
    if digest not in (artifact.case_digest, artifact.source_digest):
        raise ValueError("case does not match the artifact's case digest")
    points = grid.astype(float) if isinstance(grid, np.ndarray) else grid_points(grid)
    if points.ndim != 2 or points.shape[1] != artifact.D:
        raise ValueError(f"grid points must have {artifact.D} coordinates")
    Y = build_ybus(case).Y

    def one(s):
        ev = evaluate_artifact(artifact, s)
        nr = nr_solve(case, scaled_injections(case, artifact.scales, s), cfg, Y=Y)
        err = np.abs(ev.V - nr.V) if nr.converged else None
        return ComparisonRow(s=s, nr=nr, mdhem=ev, error=err)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(one, points))
    else:
        rows = [one(s) for s in points]
    return ComparisonTable(tuple(rows))
