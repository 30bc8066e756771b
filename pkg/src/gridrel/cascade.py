"""Cascading-failure simulation over the DC flow engine.

Each island left after the initial branch outages is resolved independently:
islands without supply lose their load, a lone supply bus serves what it can,
and anything larger goes through dispatch, iterative load shedding around the
worst overload, and finally overload-driven branch tripping, after which the
island is split again and its pieces are re-queued.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .flow import FlowSnapshot, balanced_flow, dc_opf, proportional_dispatch
from .netmodel import NetworkError, PowerNetwork, apply_state, islands, neighborhood

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class CascadeConfig:
    shed_fraction: float = 0.05
    max_shed_iterations: int = 20
    radius_r: int = 1
    overload_tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.shed_fraction < 1:
            raise ConfigurationError("shed_fraction must lie in (0, 1)")
        if self.max_shed_iterations < 1:
            raise ConfigurationError("max_shed_iterations must be >= 1")
        if self.radius_r < 0:
            raise ConfigurationError("radius_r must be >= 0")


@dataclass
class CascadeOutcome:
    total_load: float
    served_load: float
    loss_fraction: float
    tripped_branches: list[int] = field(default_factory=list)
    shed_events: int = 0
    islands_processed: int = 0
    island_served: list[tuple[tuple[int, ...], float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total_load": self.total_load,
            "served_load": self.served_load,
            "loss_fraction": self.loss_fraction,
            "tripped_branches": list(self.tripped_branches),
            "shed_events": self.shed_events,
            "islands_processed": self.islands_processed,
        }


def shed_loads(island: PowerNetwork, buses, fraction: float) -> PowerNetwork:
    """Scale the current load at each listed bus by ``1 - fraction``."""
    if not 0 < fraction < 1:
        raise ConfigurationError("shed fraction must lie in (0, 1)")
    targets = {b.id: b.load_p * (1.0 - fraction) for b in island.buses if b.id in set(buses)}
    if not targets:
        return island
    return island.with_loads(targets)


def most_overloaded(island: PowerNetwork, snap: FlowSnapshot, tol: float) -> int | None:
    """Branch id with the largest |flow|/rate above ``1 + tol``; ties go to the smallest id."""
    best, best_ratio = None, 1.0 + tol
    for br in sorted(island.branches, key=lambda b: b.id):
        if not br.in_service or br.rate <= 0:
            continue
        ratio = abs(snap.flows.get(br.id, 0.0)) / br.rate
        if ratio > best_ratio:
            best, best_ratio = br.id, ratio
    return best


def validate_base_case(net: PowerNetwork) -> None:
    """The intact network must be dispatchable island by island."""
    for bus_set in islands(net):
        isl = net.subnetwork(bus_set)
        if not isl.supply_buses() or isl.n_buses == 1:
            continue
        if not dc_opf(isl).feasible:
            raise ConfigurationError(f"base case is infeasible on island starting at bus "
                                     f"{bus_set[0]}")


def run_cascade(net: PowerNetwork, x, cfg: CascadeConfig = CascadeConfig()) -> CascadeOutcome:
    x = np.asarray(x, dtype=np.uint8)
    state = apply_state(net, x)
    total = net.total_load()
    key = rng.state_key(x)
    out = CascadeOutcome(total_load=total, served_load=0.0, loss_fraction=0.0)

    queue = deque(state.subnetwork(s) for s in islands(state))
    while queue:
        island = queue.popleft()
        index = out.islands_processed
        out.islands_processed += 1
        served, children = _resolve_island(island, cfg, key, index, out)
        if children is None:
            out.island_served.append((tuple(island.bus_ids), served))
        else:
            queue.extend(children)

    out.served_load = float(sum(s for _, s in out.island_served))
    if total > 0:
        loss = (total - out.served_load) / total
        out.loss_fraction = float(min(1.0, max(0.0, loss)))
    return out


def _resolve_island(island: PowerNetwork, cfg: CascadeConfig, key: int, index: int,
                    out: CascadeOutcome):
    """Return ``(served, None)`` when the island settles, ``(0, sub_islands)`` after a trip."""
    supply = island.supply_buses()
    load = island.total_load()
    if not supply:
        return 0.0, None
    if island.n_buses == 1:
        return min(island.capacity(), load), None

    stream = rng.substream(cfg.seed, "cascade-reference", key, index)
    reference = supply[int(stream.integers(len(supply)))]

    current = island
    worst = None
    for attempt in range(cfg.max_shed_iterations + 1):
        if dc_opf(current).feasible:
            return current.total_load(), None
        snap = balanced_flow(current, proportional_dispatch(current), reference)
        worst = most_overloaded(current, snap, cfg.overload_tolerance)
        if worst is None:
            return min(current.capacity(), current.total_load()), None
        if attempt == cfg.max_shed_iterations:
            break
        area = neighborhood(current, worst, cfg.radius_r)
        current = shed_loads(current, area, cfg.shed_fraction)
        out.shed_events += 1

    out.tripped_branches.append(worst)
    tripped = current.without_branch(worst)
    log.debug("tripping branch %d", worst)
    return 0.0, [tripped.subnetwork(s) for s in islands(tripped)]
