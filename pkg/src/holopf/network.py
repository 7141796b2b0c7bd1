"""Network case model, admittance matrix construction and JSON case I/O.

All electrical quantities are per-unit on the case MVA base and angles are
in radians. Loads are constant power. Injections are signed: a bus that
consumes power has a negative net injection.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np


class CaseError(ValueError):
    """Raised when a case file cannot be parsed or fails validation."""


class BusKind(str, enum.Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"

    @classmethod
    def parse(cls, value: str) -> BusKind:
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise CaseError(f"unknown bus kind {value!r}; expected slack, pv or pq") from None


@dataclass(frozen=True)
class BusSpec:
    id: int
    kind: BusKind
    v_setpoint: float = 1.0
    v_angle: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    q_min: float = -math.inf
    q_max: float = math.inf
    shunt: complex = 0j
    # Set only on a former PV bus converted to PQ: fixed generator reactive output.
    q_fixed: float | None = None

    @property
    def p_injection(self) -> float:
        return self.p_gen - self.p_load

    @property
    def q_injection(self) -> float:
        """Net reactive injection for PQ buses (generator output for converted buses)."""
        q_gen = self.q_fixed if self.q_fixed is not None else 0.0
        return q_gen - self.q_load

    @property
    def is_fixed(self) -> bool:
        return self.q_fixed is not None


@dataclass(frozen=True)
class BranchSpec:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    phase: float = 0.0

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    @property
    def total_shunt(self) -> complex:
        return complex(0.0, self.b)


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Full bus admittance matrix and its series/shunt split.

    ``Y_sh`` holds the row sums of ``Y`` so that ``Y_tr = Y - diag(Y_sh)`` has
    zero row sums; off-nominal taps therefore land in the shunt part.
    """

    Y: np.ndarray
    Y_tr: np.ndarray
    Y_sh: np.ndarray

    @property
    def n(self) -> int:
        return self.Y.shape[0]


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[BusSpec, ...]
    branches: tuple[BranchSpec, ...]
    base_mva: float = 100.0
    areas: dict[str, tuple[int, ...]] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        _validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def index_of(self, bus_id: int) -> int:
        for i, b in enumerate(self.buses):
            if b.id == bus_id:
                return i
        raise KeyError(f"no bus with id {bus_id}")

    def bus(self, bus_id: int) -> BusSpec:
        return self.buses[self.index_of(bus_id)]

    def indices(self, kind: BusKind) -> list[int]:
        return [i for i, b in enumerate(self.buses) if b.kind is kind]

    @property
    def slack(self) -> int:
        return self.indices(BusKind.SLACK)[0]

    @property
    def pv(self) -> list[int]:
        return self.indices(BusKind.PV)

    @property
    def pq(self) -> list[int]:
        return self.indices(BusKind.PQ)

    def counts(self) -> tuple[int, int, int]:
        """(slack, PQ, PV) bus counts."""
        return (len(self.indices(BusKind.SLACK)), len(self.pq), len(self.pv))

    def injections(self) -> np.ndarray:
        """Base-case net complex injection per bus (Q part meaningful for PQ buses only)."""
        return np.array([complex(b.p_injection, b.q_injection) for b in self.buses])

    def convert_pv_to_pq(self, bus_id: int, q_gen: float) -> NetworkCase:
        """Return a copy where PV bus ``bus_id`` holds its reactive output at ``q_gen``."""
        i = self.index_of(bus_id)
        b = self.buses[i]
        if b.kind is not BusKind.PV:
            raise CaseError(f"bus {bus_id} is not a PV bus")
        buses = list(self.buses)
        buses[i] = replace(b, kind=BusKind.PQ, q_fixed=float(q_gen))
        return replace(self, buses=tuple(buses))

    def to_dict(self) -> dict:
        return case_to_dict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _validate(case: NetworkCase) -> None:
    ids = [b.id for b in case.buses]
    if not ids:
        raise CaseError("case has no buses")
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus ids")
    n_slack = sum(b.kind is BusKind.SLACK for b in case.buses)
    if n_slack != 1:
        raise CaseError(f"exactly one slack bus required, found {n_slack}")
    for b in case.buses:
        if b.q_min > b.q_max:
            raise CaseError(f"bus {b.id}: q_min {b.q_min} > q_max {b.q_max}")
        if b.kind in (BusKind.SLACK, BusKind.PV) and not b.v_setpoint > 0:
            raise CaseError(f"bus {b.id}: v_setpoint must be positive")
        if b.q_fixed is not None and b.kind is not BusKind.PQ:
            raise CaseError(f"bus {b.id}: q_fixed is only valid on PQ buses")
    known = set(ids)
    for k, br in enumerate(case.branches):
        if br.from_bus == br.to_bus:
            raise CaseError(f"branches[{k}]: from == to ({br.from_bus})")
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseError(f"branches[{k}]: unknown bus {br.from_bus}->{br.to_bus}")
        if br.r == 0 and br.x == 0:
            raise CaseError(f"branches[{k}]: zero series impedance")
        if br.tap <= 0:
            raise CaseError(f"branches[{k}]: tap must be positive")
    for name, members in case.areas.items():
        for m in members:
            if m not in known:
                raise CaseError(f"area {name!r}: unknown bus {m}")


def build_ybus(case: NetworkCase) -> AdmittanceMatrix:
    """Assemble the nodal admittance matrix with the standard pi-branch model."""
    n = case.n_bus
    pos = {b.id: i for i, b in enumerate(case.buses)}
    Y = np.zeros((n, n), dtype=complex)
    # shunt part per bus, built term by term so untapped no-shunt branches give exact zeros
    Y_sh = np.array([b.shunt for b in case.buses], dtype=complex)
    for br in case.branches:
        if br.r == 0 and br.x == 0:
            raise CaseError(f"zero-impedance branch {br.from_bus}-{br.to_bus}")
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = br.series_admittance
        half = 0.5 * br.total_shunt
        a = br.tap * np.exp(1j * br.phase)
        Y[f, f] += (ys + half) / (a * np.conj(a))
        Y[t, t] += ys + half
        Y[f, t] += -ys / np.conj(a)
        Y[t, f] += -ys / a
        inv2 = 1.0 / (a * np.conj(a))
        Y_sh[f] += half * inv2 + ys * (inv2 - 1.0 / np.conj(a))
        Y_sh[t] += half + ys * (1.0 - 1.0 / a)
    Y[np.diag_indices(n)] += np.array([b.shunt for b in case.buses])
    Y_tr = Y - np.diag(Y_sh)
    return AdmittanceMatrix(Y=Y, Y_tr=Y_tr, Y_sh=Y_sh)


# ---------------------------------------------------------------------------
# JSON I/O

def _num(obj: dict, key: str, where: str, default=None, allow_inf=None) -> float:
    val = obj.get(key, default)
    if val is None:
        if allow_inf is not None:
            return allow_inf
        raise CaseError(f"{where}.{key}: required field missing")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise CaseError(f"{where}.{key}: expected a number, got {val!r}")
    return float(val)


def case_from_dict(data: dict, name: str = "") -> NetworkCase:
    if not isinstance(data, dict):
        raise CaseError("case root must be a JSON object")
    for key in ("buses", "branches"):
        if not isinstance(data.get(key), list):
            raise CaseError(f"{key}: required array missing")

    buses = []
    for k, raw in enumerate(data["buses"]):
        where = f"buses[{k}]"
        if not isinstance(raw, dict):
            raise CaseError(f"{where}: expected an object")
        if "id" not in raw or "kind" not in raw:
            raise CaseError(f"{where}: 'id' and 'kind' are required")
        q_fixed = raw.get("q_fixed")
        buses.append(BusSpec(
            id=int(raw["id"]),
            kind=BusKind.parse(raw["kind"]),
            v_setpoint=_num(raw, "v_setpoint", where, 1.0),
            v_angle=_num(raw, "v_angle", where, 0.0),
            p_load=_num(raw, "p_load", where, 0.0),
            q_load=_num(raw, "q_load", where, 0.0),
            p_gen=_num(raw, "p_gen", where, 0.0),
            q_min=_num(raw, "q_min", where, allow_inf=-math.inf),
            q_max=_num(raw, "q_max", where, allow_inf=math.inf),
            shunt=complex(_num(raw, "g_shunt", where, 0.0), _num(raw, "b_shunt", where, 0.0)),
            q_fixed=None if q_fixed is None else _num(raw, "q_fixed", where),
        ))

    # generators on a bus are aggregated into the bus record
    gens = data.get("generators", [])
    if gens:
        ids = [b.id for b in buses]
        agg: dict[int, list[float]] = {}
        for k, g in enumerate(gens):
            where = f"generators[{k}]"
            if not isinstance(g, dict) or "bus" not in g:
                raise CaseError(f"{where}: 'bus' is required")
            bid = int(g["bus"])
            if bid not in ids:
                raise CaseError(f"{where}: unknown bus {bid}")
            acc = agg.setdefault(bid, [0.0, 0.0, 0.0, None])
            acc[0] += _num(g, "p_gen", where, 0.0)
            acc[1] += _num(g, "q_min", where, allow_inf=-math.inf)
            acc[2] += _num(g, "q_max", where, allow_inf=math.inf)
            if g.get("v_setpoint") is not None:
                acc[3] = _num(g, "v_setpoint", where)
        for i, b in enumerate(buses):
            if b.id in agg:
                p, qmin, qmax, vsp = agg[b.id]
                buses[i] = replace(
                    b, p_gen=b.p_gen + p, q_min=qmin, q_max=qmax,
                    v_setpoint=b.v_setpoint if vsp is None else vsp,
                )

    branches = []
    for k, raw in enumerate(data["branches"]):
        where = f"branches[{k}]"
        if not isinstance(raw, dict) or "from" not in raw or "to" not in raw:
            raise CaseError(f"{where}: 'from' and 'to' are required")
        tap = _num(raw, "tap", where, 1.0)
        branches.append(BranchSpec(
            from_bus=int(raw["from"]),
            to_bus=int(raw["to"]),
            r=_num(raw, "r", where, 0.0),
            x=_num(raw, "x", where, 0.0),
            b=_num(raw, "b", where, 0.0),
            tap=1.0 if tap == 0 else tap,
            phase=_num(raw, "phase", where, 0.0),
        ))

    areas = {}
    for k, raw in enumerate(data.get("areas", [])):
        if not isinstance(raw, dict) or "buses" not in raw:
            raise CaseError(f"areas[{k}]: 'buses' is required")
        areas[str(raw.get("name", f"area{k + 1}"))] = tuple(int(b) for b in raw["buses"])

    return NetworkCase(
        buses=tuple(buses),
        branches=tuple(branches),
        base_mva=_num(data, "base_mva", "case", 100.0),
        areas=areas,
        name=str(data.get("name", name)),
    )


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None


def case_to_dict(case: NetworkCase) -> dict:
    buses = []
    for b in case.buses:
        d = {
            "id": b.id, "kind": b.kind.value,
            "v_setpoint": b.v_setpoint, "v_angle": b.v_angle,
            "p_load": b.p_load, "q_load": b.q_load, "p_gen": b.p_gen,
            "q_min": _finite_or_none(b.q_min), "q_max": _finite_or_none(b.q_max),
            "g_shunt": b.shunt.real, "b_shunt": b.shunt.imag,
        }
        if b.q_fixed is not None:
            d["q_fixed"] = b.q_fixed
        buses.append(d)
    branches = [
        {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b,
         "tap": br.tap, "phase": br.phase}
        for br in case.branches
    ]
    areas = [{"name": k, "buses": list(v)} for k, v in case.areas.items()]
    return {"name": case.name, "base_mva": case.base_mva, "buses": buses,
            "branches": branches, "areas": areas}


def loads_case(text: str, name: str = "") -> NetworkCase:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{name or 'case'}: JSON parse error at line {exc.lineno}, "
                        f"column {exc.colno}: {exc.msg}") from None
    return case_from_dict(data, name=name)


def load_case(path) -> NetworkCase:
    """Read and validate a JSON case file."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise CaseError(f"case file not found: {path}") from None
    return loads_case(text, name=path.stem)


def save_case(case: NetworkCase, path) -> None:
    Path(path).write_text(json.dumps(case.to_dict(), indent=2) + "\n")


BUNDLED = ("case3", "case4", "case4_qlim", "ieee14")


def bundled_case(name: str) -> NetworkCase:
    """Load one of the cases shipped with the package (see ``BUNDLED``)."""
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled case {name!r}; choose from {BUNDLED}")
    text = resources.files("holopf").joinpath("cases", f"{name}.json").read_text()
    return loads_case(text, name=name)
