"""Network data model, JSON case format and bus admittance matrix.

All quantities held by a :class:`Network` are per-unit on ``base_mva``.
The case document stores generator limits, nominal loads and branch
ratings in MW / MVAr / MVA and is converted on load.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable, Optional, Sequence

import numpy as np


class CaseFormatError(ValueError):
    """The case document does not conform to the schema."""


class CaseValidationError(ValueError):
    """The case parsed but violates one or more network invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class BusKind(str, enum.Enum):
    PQ = "PQ"
    PV = "PV"
    SLACK = "SLACK"


class Fuel(str, enum.Enum):
    HYDRO = "HYDRO"
    GAS = "GAS"
    WIND = "WIND"
    OTHER = "OTHER"


@dataclass(frozen=True)
class CostFunction:
    """Polynomial generation cost ``c0 + c1*P + c2*P**2`` with P in MW."""

    coefficients: tuple[float, ...] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        coeffs = coeffs + (0.0,) * (3 - len(coeffs))
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def c0(self) -> float:
        return self.coefficients[0]

    @property
    def c1(self) -> float:
        return self.coefficients[1]

    @property
    def c2(self) -> float:
        return self.coefficients[2]

    def __call__(self, p_mw):
        p_mw = np.asarray(p_mw, dtype=float)
        return np.polynomial.polynomial.polyval(p_mw, self.coefficients)

    def derivative(self, p_mw):
        return np.polynomial.polynomial.polyval(
            np.asarray(p_mw, dtype=float),
            np.polynomial.polynomial.polyder(self.coefficients),
        )


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    v_min: float = 0.9
    v_max: float = 1.1
    base_kv: float = 1.0
    coord: Optional[tuple[float, float]] = None
    p_load: float = 0.0  # per-unit nominal load, PQ buses only
    q_load: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus_id: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost: CostFunction = field(default_factory=CostFunction)
    fuel: Fuel = Fuel.OTHER


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_sh: float = 0.0
    s_max: float = 0.0  # 0 means unlimited
    tap: float = 1.0

    @property
    def admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "branches", tuple(self.branches))

    # -- indexing ---------------------------------------------------------
    @cached_property
    def index(self) -> dict[int, int]:
        """Bus id -> dense position."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    @cached_property
    def pq(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PQ], dtype=int)

    @cached_property
    def pv(self) -> np.ndarray:
        """Generator buses other than the slack, in bus order."""
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PV], dtype=int)

    @cached_property
    def gen_buses(self) -> np.ndarray:
        """All generator buses (slack included), in bus order."""
        return np.array(
            [i for i, b in enumerate(self.buses) if b.kind is not BusKind.PQ], dtype=int
        )

    @cached_property
    def gen_bus_index(self) -> np.ndarray:
        """Dense bus position of every generator."""
        return np.array([self.index[g.bus_id] for g in self.generators], dtype=int)

    @cached_property
    def gen_incidence(self) -> np.ndarray:
        """(n_bus, n_gen) 0/1 matrix placing generators on buses."""
        c = np.zeros((self.n_bus, len(self.generators)))
        c[self.gen_bus_index, np.arange(len(self.generators))] = 1.0
        return c

    @cached_property
    def v_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([b.v_min for b in self.buses]), np.array([b.v_max for b in self.buses]))

    @cached_property
    def p_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([g.p_min for g in self.generators]),
                np.array([g.p_max for g in self.generators]))

    @cached_property
    def q_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([g.q_min for g in self.generators]),
                np.array([g.q_max for g in self.generators]))

    @cached_property
    def cost_matrix(self) -> np.ndarray:
        """(n_gen, 3) cost coefficients c0, c1, c2 (P in MW)."""
        return np.array([g.cost.coefficients[:3] for g in self.generators]).reshape(-1, 3)

    @cached_property
    def s_max(self) -> np.ndarray:
        return np.array([br.s_max for br in self.branches])

    def nominal_loads(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-unit nominal (P, Q) loads on the PQ buses."""
        p = np.array([self.buses[i].p_load for i in self.pq])
        q = np.array([self.buses[i].q_load for i in self.pq])
        return p, q

    def generation_cost(self, p_gen) -> np.ndarray:
        """Total cost of per-unit generator outputs; batched over leading axes."""
        p_mw = np.asarray(p_gen, dtype=float) * self.base_mva
        c = self.cost_matrix
        return (c[:, 0] + c[:, 1] * p_mw + c[:, 2] * p_mw ** 2).sum(axis=-1)

    def with_generators(self, generators: Iterable[Generator]) -> "Network":
        return replace(self, generators=tuple(generators))

    def with_branches(self, branches: Iterable[Branch]) -> "Network":
        return replace(self, branches=tuple(branches))


# ---------------------------------------------------------------------------
# admittance

def branch_matrices(net: Network):
    """Branch-level admittance pieces.

    Returns ``(Yf, Yt, Cf, Ct)``: ``Yf @ V`` and ``Yt @ V`` give the current
    injected into each branch at its from and to ends; ``Cf``/``Ct`` are the
    0/1 branch-bus incidence matrices.
    """
    nl, nb = len(net.branches), net.n_bus
    yf = np.zeros((nl, nb), dtype=complex)
    yt = np.zeros((nl, nb), dtype=complex)
    cf = np.zeros((nl, nb))
    ct = np.zeros((nl, nb))
    for k, br in enumerate(net.branches):
        i, j = net.index[br.from_bus], net.index[br.to_bus]
        y = br.admittance
        half_b = 0.5j * br.b_sh
        yf[k, i] = y / br.tap ** 2 + half_b
        yf[k, j] = -y / br.tap
        yt[k, i] = -y / br.tap
        yt[k, j] = y + half_b
        cf[k, i] = 1.0
        ct[k, j] = 1.0
    return yf, yt, cf, ct


def build_ybus(net: Network) -> np.ndarray:
    """Dense complex bus admittance matrix in dense bus order."""
    yf, yt, cf, ct = branch_matrices(net)
    return cf.T @ yf + ct.T @ yt


# ---------------------------------------------------------------------------
# validation

def validate(net: Network) -> list[str]:
    """Return every invariant violation found; empty iff well-formed."""
    out: list[str] = []
    if not (net.base_mva > 0 and math.isfinite(net.base_mva)):
        out.append(f"base_mva must be positive, got {net.base_mva}")

    seen: dict[int, int] = {}
    for k, b in enumerate(net.buses):
        if b.id in seen:
            out.append(f"duplicate bus id {b.id} (buses[{seen[b.id]}] and buses[{k}])")
        else:
            seen[b.id] = k
        if not b.v_min > 0:
            out.append(f"bus {b.id}: v_min must be positive, got {b.v_min}")
        if not b.v_min <= b.v_max:
            out.append(f"bus {b.id}: v_min {b.v_min} exceeds v_max {b.v_max}")
        if b.kind is not BusKind.PQ and (b.p_load != 0 or b.q_load != 0):
            out.append(f"bus {b.id}: nominal load on a {b.kind.value} bus")
    slacks = [b.id for b in net.buses if b.kind is BusKind.SLACK]
    if not slacks:
        out.append("no slack bus")
    elif len(slacks) > 1:
        out.append("multiple slack buses: " + ", ".join(map(str, slacks)))

    kinds = {b.id: b.kind for b in net.buses}
    has_gen: set[int] = set()
    for k, g in enumerate(net.generators):
        if g.bus_id not in kinds:
            out.append(f"generator {k}: unknown bus {g.bus_id}")
            continue
        if kinds[g.bus_id] is BusKind.PQ:
            out.append(f"generator {k} on PQ bus {g.bus_id}")
        has_gen.add(g.bus_id)
        if not g.p_min <= g.p_max:
            out.append(f"generator {k}: p_min {g.p_min} exceeds p_max {g.p_max}")
        if not g.q_min <= g.q_max:
            out.append(f"generator {k}: q_min {g.q_min} exceeds q_max {g.q_max}")
        if g.cost.c2 < 0:
            out.append(f"generator {k}: negative quadratic cost coefficient")
    for b in net.buses:
        if b.kind is not BusKind.PQ and b.id not in has_gen:
            out.append(f"{b.kind.value} bus {b.id} has no generator")

    for k, br in enumerate(net.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in kinds:
                out.append(f"branch {k}: unknown bus {end}")
        if br.from_bus == br.to_bus:
            out.append(f"branch {k}: from_bus equals to_bus ({br.from_bus})")
        if not br.r >= 0:
            out.append(f"branch {k}: negative resistance {br.r}")
        if br.x == 0:
            out.append(f"zero reactance on branch {k}")
        if not br.tap > 0:
            out.append(f"branch {k}: tap must be positive, got {br.tap}")
        if not br.s_max >= 0:
            out.append(f"branch {k}: negative flow limit {br.s_max}")

    if net.buses and not _connected(net, kinds):
        out.append("network is not connected")
    return out


def _connected(net: Network, kinds: dict[int, BusKind]) -> bool:
    adj: dict[int, set[int]] = {b.id: set() for b in net.buses}
    for br in net.branches:
        if br.from_bus in adj and br.to_bus in adj:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
    start = net.buses[0].id
    stack, seen = [start], {start}
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(adj)


# ---------------------------------------------------------------------------
# JSON case format

_BUS_FIELDS = {"id": int, "type": str}
_GEN_FIELDS = {"bus": int, "p_min": float, "p_max": float, "q_min": float, "q_max": float}
_BRANCH_FIELDS = {"from": int, "to": int, "r": float, "x": float}


def _require(obj: Any, where: str, fields: dict[str, type]) -> None:
    if not isinstance(obj, dict):
        raise CaseFormatError(f"{where}: expected an object")
    for name, typ in fields.items():
        if name not in obj:
            raise CaseFormatError(f"{where}: missing field '{name}'")
        _check_type(obj[name], typ, f"{where}.{name}")


def _check_type(value: Any, typ: type, where: str) -> None:
    if typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif typ is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, typ)
    if not ok:
        raise CaseFormatError(f"{where}: expected {typ.__name__}, got {type(value).__name__}")


def _opt(obj: dict, name: str, default, typ: type, where: str):
    if name not in obj:
        return default
    _check_type(obj[name], typ, f"{where}.{name}")
    return obj[name]


def parse_case(text: str) -> Network:
    """Parse a case document without checking network invariants."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseFormatError("case document must be a JSON object")
    for key in ("base_mva", "buses", "generators", "branches"):
        if key not in doc:
            raise CaseFormatError(f"missing top-level key '{key}'")
    _check_type(doc["base_mva"], float, "base_mva")
    base = float(doc["base_mva"])
    if base <= 0:
        raise CaseFormatError("base_mva must be positive")
    for key in ("buses", "generators", "branches"):
        if not isinstance(doc[key], list):
            raise CaseFormatError(f"'{key}' must be a list")

    buses = []
    for k, b in enumerate(doc["buses"]):
        where = f"buses[{k}]"
        _require(b, where, _BUS_FIELDS)
        try:
            kind = BusKind(b["type"].upper())
        except ValueError:
            raise CaseFormatError(f"{where}.type: unknown bus type {b['type']!r}") from None
        coord = b.get("coord")
        if coord is not None:
            if not (isinstance(coord, list) and len(coord) == 2):
                raise CaseFormatError(f"{where}.coord: expected [x, y]")
            for c in coord:
                _check_type(c, float, f"{where}.coord")
            coord = (float(coord[0]), float(coord[1]))
        buses.append(Bus(
            id=b["id"],
            kind=kind,
            v_min=float(_opt(b, "v_min", 0.9, float, where)),
            v_max=float(_opt(b, "v_max", 1.1, float, where)),
            base_kv=float(_opt(b, "base_kv", 1.0, float, where)),
            coord=coord,
            p_load=float(_opt(b, "p_load", 0.0, float, where)) / base,
            q_load=float(_opt(b, "q_load", 0.0, float, where)) / base,
        ))

    gens = []
    for k, g in enumerate(doc["generators"]):
        where = f"generators[{k}]"
        _require(g, where, _GEN_FIELDS)
        cost = _opt(g, "cost", [0.0, 0.0, 0.0], list, where)
        for c in cost:
            _check_type(c, float, f"{where}.cost")
        fuel = _opt(g, "fuel", "OTHER", str, where)
        try:
            fuel = Fuel(fuel.upper())
        except ValueError:
            raise CaseFormatError(f"{where}.fuel: unknown fuel {fuel!r}") from None
        gens.append(Generator(
            bus_id=g["bus"],
            p_min=g["p_min"] / base,
            p_max=g["p_max"] / base,
            q_min=g["q_min"] / base,
            q_max=g["q_max"] / base,
            cost=CostFunction(tuple(cost)),
            fuel=fuel,
        ))

    branches = []
    for k, br in enumerate(doc["branches"]):
        where = f"branches[{k}]"
        _require(br, where, _BRANCH_FIELDS)
        branches.append(Branch(
            from_bus=br["from"],
            to_bus=br["to"],
            r=float(br["r"]),
            x=float(br["x"]),
            b_sh=float(_opt(br, "b", 0.0, float, where)),
            s_max=float(_opt(br, "s_max", 0.0, float, where)) / base,
            tap=float(_opt(br, "tap", 1.0, float, where)),
        ))
    return Network(tuple(buses), tuple(gens), tuple(branches), base,
                   name=str(doc.get("name", "")))


def load_case(text: str) -> Network:
    """Parse and validate a JSON case document."""
    net = parse_case(text)
    problems = validate(net)
    if problems:
        raise CaseValidationError(problems)
    return net


def load_case_file(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return load_case(fh.read())


def _physical(value: float, base: float) -> float:
    # Pick the float whose division by base recovers value bit-for-bit.
    y = value * base
    if y / base == value:
        return y
    lo = hi = y
    for _ in range(64):
        lo = math.nextafter(lo, -math.inf)
        hi = math.nextafter(hi, math.inf)
        if lo / base == value:
            return lo
        if hi / base == value:
            return hi
    return y


def save_case(net: Network) -> str:
    """Serialize to the JSON case format; exact inverse of :func:`load_case`."""
    base = net.base_mva
    buses = []
    for b in net.buses:
        d: dict[str, Any] = {"id": b.id, "type": b.kind.value, "v_min": b.v_min,
                             "v_max": b.v_max, "base_kv": b.base_kv}
        if b.coord is not None:
            d["coord"] = list(b.coord)
        if b.p_load or b.q_load:
            d["p_load"] = _physical(b.p_load, base)
            d["q_load"] = _physical(b.q_load, base)
        buses.append(d)
    gens = [{
        "bus": g.bus_id,
        "p_min": _physical(g.p_min, base),
        "p_max": _physical(g.p_max, base),
        "q_min": _physical(g.q_min, base),
        "q_max": _physical(g.q_max, base),
        "cost": list(g.cost.coefficients),
        "fuel": g.fuel.value,
    } for g in net.generators]
    branches = [{
        "from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b_sh,
        "s_max": _physical(br.s_max, base), "tap": br.tap,
    } for br in net.branches]
    doc = {"name": net.name, "base_mva": base, "buses": buses,
           "generators": gens, "branches": branches}
    return json.dumps(doc, indent=1)
