"""Linearized (DC) power flow and LP dispatch for a single island."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lp import solve_lp
from .netmodel import NetworkError, PowerNetwork, islands

log = logging.getLogger(__name__)


class TopologyError(NetworkError):
    """The island is not connected, so the reduced susceptance matrix is singular."""


class ClassificationError(NetworkError):
    """An island was routed to dispatch without any generator."""


@dataclass(frozen=True)
class FlowSnapshot:
    flows: dict[int, float]  # branch id -> MW, positive from -> to
    angles: dict[int, float]  # bus id -> radians
    reference: int


@dataclass(frozen=True)
class DispatchResult:
    status: str  # "feasible" | "infeasible"
    generation: tuple[float, ...]  # per generator, island order
    flows: dict[int, float]
    cost: float

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


@dataclass(frozen=True)
class ProportionalDispatch:
    generation: tuple[float, ...]
    alpha: float
    deficit: float  # load not covered by generation (MW); >0 only when capacity < load

    def injections(self, island: PowerNetwork) -> dict[int, float]:
        inj = {b.id: -b.load_p for b in island.buses}
        for g, p in zip(island.generators, self.generation):
            inj[g.bus_id] += p
        return inj


def _susceptance(island: PowerNetwork):
    """Reduced-order ingredients: bus order, branch list, incidence and 1/x arrays."""
    live = [br for br in island.branches if br.in_service]
    pos = {b.id: i for i, b in enumerate(island.buses)}
    n = len(pos)
    inc = np.zeros((len(live), n))
    for k, br in enumerate(live):
        inc[k, pos[br.from_bus]] = 1.0
        inc[k, pos[br.to_bus]] = -1.0
    b = np.array([1.0 / br.reactance for br in live])
    B = inc.T @ (b[:, None] * inc)
    return live, pos, inc, b, B


def _check_connected(island: PowerNetwork) -> None:
    if len(islands(island)) != 1:
        raise TopologyError("island is not connected")


def dc_power_flow(island: PowerNetwork, injections: dict[int, float],
                  reference: int) -> FlowSnapshot:
    """Solve ``B' theta = p`` with ``theta[reference] = 0`` and return MW branch flows.

    ``injections`` are net MW per bus and must sum to zero; callers balance any
    mismatch at the reference bus before calling.
    """
    _check_connected(island)
    live, pos, inc, b, B = _susceptance(island)
    if reference not in pos:
        raise NetworkError(f"reference bus {reference} not in island")
    p = np.array([injections.get(bus.id, 0.0) for bus in island.buses], dtype=float)
    scale = max(1.0, float(np.abs(p).sum()))
    if abs(p.sum()) > 1e-6 * scale:
        raise NetworkError(f"injections do not balance (sum = {p.sum():.6g} MW)")
    r = pos[reference]
    keep = [i for i in range(len(pos)) if i != r]
    theta = np.zeros(len(pos))
    if keep:
        theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], p[keep] / island.base_mva)
    f = island.base_mva * b * (inc @ theta)
    return FlowSnapshot(flows={br.id: float(v) for br, v in zip(live, f)},
                        angles={bus.id: float(theta[i]) for i, bus in enumerate(island.buses)},
                        reference=reference)


def transfer_matrix(island: PowerNetwork, reference: int | None = None):
    """Power-transfer distribution factors: MW branch flow per MW injected at each bus.

    Injections are withdrawn at ``reference``; for balanced injection vectors the
    resulting flows do not depend on that choice.
    """
    live, pos, inc, b, B = _susceptance(island)
    if reference is None:
        reference = island.buses[0].id
    r = pos[reference]
    keep = [i for i in range(len(pos)) if i != r]
    X = np.zeros((len(pos), len(pos)))
    if keep:
        X[np.ix_(keep, keep)] = np.linalg.inv(B[np.ix_(keep, keep)])
    return live, pos, (b[:, None] * inc) @ X


def dc_opf(island: PowerNetwork) -> DispatchResult:
    """Least-cost dispatch meeting island load within generator and branch limits.

    Quadratic costs enter through their midpoint marginal cost, keeping the
    problem a linear program.  Each rate-limited branch contributes one row
    ``ptdf @ p + s = rate + ptdf_load`` with slack ``s in [0, 2 rate]``, which
    encodes ``-rate <= flow <= rate``.
    """
    gens = list(island.generators)
    if not any(g.in_service for g in gens):
        raise ClassificationError("island has no in-service generator")
    _check_connected(island)
    load = np.array([b.load_p for b in island.buses])
    total = float(load.sum())
    live, pos, ptdf = transfer_matrix(island)

    on = [i for i, g in enumerate(gens) if g.in_service]
    G = np.zeros((len(pos), len(on)))
    for k, i in enumerate(on):
        G[pos[gens[i].bus_id], k] = 1.0
    flow_per_gen = ptdf @ G
    flow_from_load = ptdf @ load  # flows = flow_per_gen @ p - flow_from_load

    limited = [k for k, br in enumerate(live) if br.rate > 0]
    ng, nl = len(on), len(limited)
    A = np.zeros((1 + nl, ng + nl))
    rhs = np.zeros(1 + nl)
    A[0, :ng] = 1.0
    rhs[0] = total
    for row, k in enumerate(limited, start=1):
        A[row, :ng] = flow_per_gen[k]
        A[row, ng + row - 1] = 1.0
        rhs[row] = live[k].rate + flow_from_load[k]
    lo = np.concatenate([[gens[i].p_min for i in on], np.zeros(nl)])
    hi = np.concatenate([[gens[i].p_max for i in on], [2.0 * live[k].rate for k in limited]])
    cost = np.concatenate([[gens[i].marginal_cost() for i in on], np.zeros(nl)])

    res = solve_lp(cost, A, rhs, lo, hi)
    if res.status != "optimal":
        return DispatchResult("infeasible", tuple(0.0 for _ in gens), {}, float("inf"))
    p_on = res.x[:ng]
    generation = np.zeros(len(gens))
    generation[on] = p_on
    flows = flow_per_gen @ p_on - flow_from_load
    return DispatchResult(
        status="feasible",
        generation=tuple(float(v) for v in generation),
        flows={br.id: float(v) for br, v in zip(live, flows)},
        cost=float(cost[:ng] @ p_on),
    )


def proportional_dispatch(island: PowerNetwork) -> ProportionalDispatch:
    """Scale all generators together, ``p = p_min + alpha (p_max - p_min)``, to meet load.

    ``alpha`` is clipped to [0, 1]; when capacity falls short the shortfall is
    returned as ``deficit`` for the caller to balance at the reference bus.
    """
    gens = list(island.generators)
    load = island.total_load()
    pmin = np.array([g.p_min if g.in_service else 0.0 for g in gens])
    pmax = np.array([g.p_max if g.in_service else 0.0 for g in gens])
    span = float((pmax - pmin).sum())
    target = min(load, float(pmax.sum()))
    if span > 0:
        alpha = float(np.clip((target - pmin.sum()) / span, 0.0, 1.0))
    else:
        alpha = 0.0
    gen = pmin + alpha * (pmax - pmin)
    deficit = max(0.0, load - float(gen.sum()))
    if deficit > 0:
        log.debug("proportional dispatch short by %.6g MW", deficit)
    return ProportionalDispatch(tuple(float(v) for v in gen), alpha, deficit)


def balanced_flow(island: PowerNetwork, dispatch: ProportionalDispatch,
                  reference: int) -> FlowSnapshot:
    """Power flow for a proportional dispatch with any mismatch absorbed at ``reference``."""
    inj = dispatch.injections(island)
    inj[reference] -= sum(inj.values())
    return dc_power_flow(island, inj, reference)
