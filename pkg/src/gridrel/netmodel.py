"""Power network data model, MATPOWER ingestion, and topology queries."""

from __future__ import annotations

import json
import logging
import re
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)


class NetworkError(ValueError):
    """Invalid network content or an invalid query against a network."""


class ParseError(NetworkError):
    def __init__(self, message: str, block: str | None = None, row: int | None = None,
                 column: int | None = None):
        where = []
        if block is not None:
            where.append(f"mpc.{block}")
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.block = block
        self.row = row
        self.column = column


@dataclass(frozen=True)
class Bus:
    id: int
    load_p: float
    load_q: float = 0.0
    is_reference_candidate: bool = False


@dataclass(frozen=True)
class Generator:
    bus_id: int
    p_min: float
    p_max: float
    cost_coeffs: tuple[float, ...] = (0.0, 1.0, 0.0)  # constant, linear, quadratic
    in_service: bool = True

    def marginal_cost(self) -> float:
        """Linear cost used by the dispatch LP: slope at the midpoint of [p_min, p_max]."""
        c = tuple(self.cost_coeffs) + (0.0, 0.0, 0.0)
        mid = 0.5 * (self.p_min + self.p_max)
        return c[1] + 2.0 * c[2] * mid


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    resistance: float = 0.0
    rate: float = 0.0  # MW, 0 = unlimited
    in_service: bool = True
    # pi-model and transformer data; carried through, unused by the DC engine
    charging: float = 0.0
    tap: float = 0.0
    shift: float = 0.0


@dataclass(frozen=True)
class PowerNetwork:
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    _bus_pos: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "branches", tuple(self.branches))
        pos = {}
        for i, b in enumerate(self.buses):
            if b.id in pos:
                raise NetworkError(f"duplicate bus id {b.id}")
            pos[b.id] = i
        object.__setattr__(self, "_bus_pos", pos)

    # -- basic queries -------------------------------------------------
    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def bus_position(self, bus_id: int) -> int:
        return self._bus_pos[bus_id]

    def has_bus(self, bus_id: int) -> bool:
        return bus_id in self._bus_pos

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def total_load(self) -> float:
        return float(sum(b.load_p for b in self.buses))

    def in_service_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.in_service]

    def in_service_generators(self) -> list[Generator]:
        return [g for g in self.generators if g.in_service]

    def supply_buses(self) -> list[int]:
        """Buses hosting at least one in-service generator, in bus order."""
        hosts = {g.bus_id for g in self.generators if g.in_service}
        return [b.id for b in self.buses if b.id in hosts]

    def capacity(self) -> float:
        return float(sum(g.p_max for g in self.generators if g.in_service))

    def branch(self, branch_id: int) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise NetworkError(f"unknown branch {branch_id}")

    # -- derived networks ----------------------------------------------
    def with_loads(self, loads: Mapping[int, float]) -> "PowerNetwork":
        buses = tuple(replace(b, load_p=float(loads[b.id])) if b.id in loads else b
                      for b in self.buses)
        return replace(self, buses=buses)

    def without_branch(self, branch_id: int) -> "PowerNetwork":
        branches = tuple(replace(br, in_service=False) if br.id == branch_id else br
                         for br in self.branches)
        return replace(self, branches=branches)

    def subnetwork(self, bus_ids: Iterable[int]) -> "PowerNetwork":
        """Restriction to a bus subset: its buses, generators, and in-service internal branches.

        Branch ids are preserved, so they stay meaningful for cascade bookkeeping.
        """
        keep = set(bus_ids)
        return PowerNetwork(
            base_mva=self.base_mva,
            buses=tuple(b for b in self.buses if b.id in keep),
            generators=tuple(g for g in self.generators if g.bus_id in keep),
            branches=tuple(br for br in self.branches
                           if br.in_service and br.from_bus in keep and br.to_bus in keep),
        )

    def validate(self) -> None:
        """Check the structural invariants of a full (not sub-) network."""
        if not self.buses:
            raise NetworkError("network has no buses")
        if not self.generators:
            raise NetworkError("network has no generators")
        for b in self.buses:
            if b.load_p < 0:
                raise NetworkError(f"bus {b.id}: negative load {b.load_p}")
        for g in self.generators:
            if not self.has_bus(g.bus_id):
                raise NetworkError(f"generator references unknown bus {g.bus_id}")
            if g.p_min > g.p_max:
                raise NetworkError(f"generator at bus {g.bus_id}: p_min > p_max")
        for i, br in enumerate(self.branches):
            if br.id != i:
                raise NetworkError(f"branch ids must be contiguous; position {i} has id {br.id}")
            if not (self.has_bus(br.from_bus) and self.has_bus(br.to_bus)):
                raise NetworkError(f"branch {br.id} references an unknown bus")
            if br.from_bus == br.to_bus:
                raise NetworkError(f"branch {br.id} is a self-loop")
            if br.in_service and br.reactance == 0:
                raise NetworkError(f"branch {br.id} has zero reactance")

    # -- canonical JSON ------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "base_mva": self.base_mva,
            "buses": [asdict(b) for b in self.buses],
            "generators": [dict(asdict(g), cost_coeffs=list(g.cost_coeffs))
                           for g in self.generators],
            "branches": [asdict(br) for br in self.branches],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PowerNetwork":
        try:
            net = cls(
                base_mva=float(data["base_mva"]),
                buses=tuple(Bus(**b) for b in data["buses"]),
                generators=tuple(Generator(**dict(g, cost_coeffs=tuple(g["cost_coeffs"])))
                                 for g in data["generators"]),
                branches=tuple(Branch(**br) for br in data["branches"]),
            )
        except (KeyError, TypeError) as exc:
            raise NetworkError(f"malformed network document: {exc}") from exc
        net.validate()
        return net

    def to_json(self, indent: int | None = 1) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "PowerNetwork":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# MATPOWER reader / writer
# ---------------------------------------------------------------------------

# MATPOWER v7 column positions (0-based) for the consumed columns
BUS_I, BUS_TYPE, PD, QD = 0, 1, 2, 3
GEN_BUS, GEN_STATUS, PMAX, PMIN = 0, 7, 8, 9
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 5, 8, 9, 10
REF, PV = 3, 2

_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;\s]+)\s*;")
_BLOCK_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_block(name: str, body: str, min_cols: int) -> list[list[float]]:
    rows = []
    for chunk in re.split(r"[;\n]", body):
        tokens = chunk.replace(",", " ").split()
        if not tokens:
            continue
        row_no = len(rows) + 1
        values = []
        for col, tok in enumerate(tokens, start=1):
            try:
                values.append(float(tok))
            except ValueError:
                raise ParseError(f"non-numeric entry {tok!r}", name, row_no, col) from None
        if len(values) < min_cols:
            raise ParseError(f"expected at least {min_cols} columns, found {len(values)}",
                             name, row_no, len(values) + 1)
        rows.append(values)
    return rows


def _poly_cost(row: list[float], row_no: int) -> tuple[float, float, float]:
    model = int(row[0])
    if model != 2:
        raise ParseError("only polynomial (model 2) costs are supported", "gencost", row_no, 1)
    ncost = int(row[3])
    coeffs = row[4:4 + ncost]
    if len(coeffs) != ncost:
        raise ParseError(f"expected {ncost} cost coefficients", "gencost", row_no, 5)
    if ncost > 3 and any(c != 0 for c in coeffs[:ncost - 3]):
        raise ParseError("polynomial costs above quadratic are not supported",
                         "gencost", row_no, 5)
    ascending = list(reversed(coeffs)) + [0.0, 0.0, 0.0]
    return (ascending[0], ascending[1], ascending[2])


def parse_matpower_case(text: str) -> PowerNetwork:
    """Read a MATPOWER ``.m`` case into a :class:`PowerNetwork`.

    Branch rows with STATUS=0 are dropped so that branch ids ``0..n_l-1``
    enumerate exactly the initially in-service (vulnerable) branches in file
    order.  Missing ``mpc.gencost`` defaults every generator to a linear cost
    of 1 $/MWh.
    """
    clean = _strip_comments(text)
    m = _SCALAR_RE.search(clean)
    if m is None:
        raise ParseError("missing mpc.baseMVA")
    try:
        base_mva = float(m.group(1))
    except ValueError:
        raise ParseError(f"non-numeric baseMVA {m.group(1)!r}") from None

    blocks = {name: body for name, body in _BLOCK_RE.findall(clean)}
    for required in ("bus", "gen", "branch"):
        if required not in blocks:
            raise ParseError(f"missing mpc.{required} block")

    bus_rows = _parse_block("bus", blocks["bus"], 4)
    gen_rows = _parse_block("gen", blocks["gen"], 10)
    branch_rows = _parse_block("branch", blocks["branch"], 4)
    cost_rows = _parse_block("gencost", blocks["gencost"], 4) if "gencost" in blocks else None

    buses, seen = [], set()
    for r, row in enumerate(bus_rows, start=1):
        bid = int(row[BUS_I])
        if bid in seen:
            raise ParseError(f"duplicate bus id {bid}", "bus", r, BUS_I + 1)
        if row[PD] < 0:
            raise ParseError(f"negative load {row[PD]}", "bus", r, PD + 1)
        seen.add(bid)
        buses.append(Bus(id=bid, load_p=row[PD], load_q=row[QD],
                         is_reference_candidate=int(row[BUS_TYPE]) in (PV, REF)))

    if cost_rows is not None and len(cost_rows) < len(gen_rows):
        raise ParseError(f"gencost has {len(cost_rows)} rows for {len(gen_rows)} generators",
                         "gencost")
    generators = []
    for r, row in enumerate(gen_rows, start=1):
        bid = int(row[GEN_BUS])
        if bid not in seen:
            raise ParseError(f"unknown bus {bid}", "gen", r, GEN_BUS + 1)
        if row[PMIN] > row[PMAX]:
            raise ParseError("PMIN exceeds PMAX", "gen", r, PMIN + 1)
        cost = _poly_cost(cost_rows[r - 1], r) if cost_rows is not None else (0.0, 1.0, 0.0)
        generators.append(Generator(bus_id=bid, p_min=row[PMIN], p_max=row[PMAX],
                                    cost_coeffs=cost, in_service=row[GEN_STATUS] > 0))

    branches = []
    dropped = 0
    for r, row in enumerate(branch_rows, start=1):
        full = row + [0.0] * (11 - len(row))
        f, t = int(full[F_BUS]), int(full[T_BUS])
        for col, bid in ((F_BUS, f), (T_BUS, t)):
            if bid not in seen:
                raise ParseError(f"unknown bus {bid}", "branch", r, col + 1)
        if f == t:
            raise ParseError("branch endpoints coincide", "branch", r, T_BUS + 1)
        status = full[BR_STATUS] if len(row) > BR_STATUS else 1.0
        if status <= 0:
            dropped += 1
            continue
        if full[BR_X] == 0:
            raise ParseError("zero reactance", "branch", r, BR_X + 1)
        branches.append(Branch(id=len(branches), from_bus=f, to_bus=t, reactance=full[BR_X],
                               resistance=full[BR_R], rate=full[RATE_A],
                               charging=full[BR_B], tap=full[TAP], shift=full[SHIFT]))
    if dropped:
        log.info("dropped %d out-of-service branch rows", dropped)

    net = PowerNetwork(base_mva=base_mva, buses=tuple(buses), generators=tuple(generators),
                       branches=tuple(branches))
    try:
        net.validate()
    except NetworkError as exc:
        raise ParseError(str(exc)) from exc
    return net


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def to_matpower(net: PowerNetwork) -> str:
    """Write the consumed subset of ``net`` as MATPOWER case text."""
    lines = ["function mpc = gridrel_case", "mpc.version = '2';",
             f"mpc.baseMVA = {_fmt(net.base_mva)};", "", "%% bus data", "mpc.bus = ["]
    for b in net.buses:
        btype = PV if b.is_reference_candidate else 1
        lines.append("\t" + "\t".join(_fmt(v) for v in
                                      (b.id, btype, b.load_p, b.load_q, 0, 0, 1, 1, 0, 0, 1,
                                       1.1, 0.9)) + ";")
    lines += ["];", "", "%% generator data", "mpc.gen = ["]
    for g in net.generators:
        lines.append("\t" + "\t".join(_fmt(v) for v in
                                      (g.bus_id, 0, 0, 0, 0, 1, net.base_mva,
                                       1 if g.in_service else 0, g.p_max, g.p_min)) + ";")
    lines += ["];", "", "%% branch data", "mpc.branch = ["]
    for br in net.branches:
        lines.append("\t" + "\t".join(_fmt(v) for v in
                                      (br.from_bus, br.to_bus, br.resistance, br.reactance,
                                       br.charging, br.rate, br.rate, br.rate, br.tap, br.shift,
                                       1 if br.in_service else 0, -360, 360)) + ";")
    lines += ["];", "", "%% generator cost data", "mpc.gencost = ["]
    for g in net.generators:
        c = tuple(g.cost_coeffs) + (0.0, 0.0, 0.0)
        lines.append("\t" + "\t".join(_fmt(v) for v in (2, 0, 0, 3, c[2], c[1], c[0])) + ";")
    lines += ["];", ""]
    return "\n".join(lines)


def load_network(path: str | Path) -> PowerNetwork:
    """Load a network from a MATPOWER ``.m`` file or a canonical ``.json`` file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return PowerNetwork.from_json(text)
    return parse_matpower_case(text)


def builtin_case(name: str = "case30") -> PowerNetwork:
    """One of the bundled benchmark cases (currently ``case30``)."""
    text = resources.files("gridrel.data").joinpath(f"{name}.m").read_text()
    return parse_matpower_case(text)


# ---------------------------------------------------------------------------
# state application and topology
# ---------------------------------------------------------------------------

def apply_state(net: PowerNetwork, x: Sequence[int] | np.ndarray) -> PowerNetwork:
    """Mark branch ``i`` out of service wherever ``x[i] == 1``."""
    x = np.asarray(x)
    if x.shape != (net.n_branches,):
        raise NetworkError(f"state vector has length {x.size}, network has "
                           f"{net.n_branches} branches")
    if not x.any():
        return net
    branches = tuple(replace(br, in_service=False) if x[i] else br
                     for i, br in enumerate(net.branches))
    return replace(net, branches=branches)


def islands(net: PowerNetwork) -> list[tuple[int, ...]]:
    """Connected components over in-service branches, as sorted bus-id tuples.

    Islands are ordered by their smallest bus position in ``net.buses``.
    """
    n = net.n_buses
    live = [br for br in net.branches if br.in_service]
    if not live:
        return [(b.id,) for b in net.buses]
    rows = [net.bus_position(br.from_bus) for br in live]
    cols = [net.bus_position(br.to_bus) for br in live]
    graph = coo_matrix((np.ones(len(live)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    groups: dict[int, list[int]] = {}
    for pos, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(net.buses[pos].id)
    return [tuple(sorted(g)) for g in sorted(groups.values(),
                                             key=lambda g: net.bus_position(g[0]))]


def _adjacency(net: PowerNetwork) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = {b.id: [] for b in net.buses}
    for br in net.branches:
        if br.in_service:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    return adj


def neighborhood(net: PowerNetwork, branch_id: int, radius: int) -> set[int]:
    """Buses within ``radius`` hops (over in-service branches) of either endpoint."""
    if radius < 0:
        raise NetworkError("radius must be non-negative")
    br = net.branch(branch_id)
    adj = _adjacency(net)
    dist = {br.from_bus: 0, br.to_bus: 0}
    queue = deque([br.from_bus, br.to_bus])
    while queue:
        u = queue.popleft()
        if dist[u] == radius:
            continue
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return set(dist)
