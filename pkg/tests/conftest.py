import numpy as np
import pytest

from gridrel.flow import dc_power_flow
from gridrel.limitstate import FailureModel, linear_toy_limit_state
from gridrel.netmodel import Branch, Bus, Generator, PowerNetwork, builtin_case


def make_net(loads, gens, branches, base_mva=100.0):
    """loads: {bus: MW}; gens: [(bus, pmin, pmax, linear_cost)]; branches: [(f, t, x, rate)]."""
    buses = [Bus(b, float(p)) for b, p in loads.items()]
    generators = [Generator(b, lo, hi, (0.0, c, 0.0)) for b, lo, hi, c in gens]
    brs = [Branch(i, f, t, x, rate=r) for i, (f, t, x, r) in enumerate(branches)]
    return PowerNetwork(base_mva, buses, generators, brs)


@pytest.fixture
def triangle():
    # equal reactances; bus 1 exports 90 MW to bus 3
    return make_net({1: 0.0, 2: 0.0, 3: 90.0}, [(1, 0, 200, 1.0)],
                    [(1, 2, 0.1, 0), (2, 3, 0.1, 0), (1, 3, 0.1, 0)])


@pytest.fixture
def bridge_net():
    # generators at 1-2, loads at 3-4, single bridge 2-3 (branch 1)
    return make_net({1: 10.0, 2: 10.0, 3: 30.0, 4: 50.0},
                    [(1, 0, 100, 1.0), (2, 0, 100, 2.0)],
                    [(1, 2, 0.1, 0), (2, 3, 0.1, 0), (3, 4, 0.1, 0)])


@pytest.fixture(scope="session")
def case30():
    return builtin_case("case30")


TOY_WEIGHTS = tuple(float(w) for w in np.round(np.linspace(0.04, 0.18, 15), 3))
TOY_THRESHOLD = 0.58


@pytest.fixture(scope="session")
def toy():
    return linear_toy_limit_state(TOY_WEIGHTS, TOY_THRESHOLD)


@pytest.fixture(scope="session")
def toy_fm():
    return FailureModel.uniform(0.125, 15)


def random_radial(rng, n):
    parents = [int(rng.integers(0, i)) for i in range(1, n)]
    loads = {i: float(rng.uniform(0, 50)) for i in range(n)}
    branches = [(p, i + 1, float(rng.uniform(0.01, 0.5)), 0) for i, p in enumerate(parents)]
    return make_net(loads, [(0, 0, 1e4, 1.0)], branches)


def bus_balance(net, inj, flows):
    err = 0.0
    for b in net.bus_ids:
        out = sum(f for k, f in flows.items() if net.branch(k).from_bus == b)
        inn = sum(f for k, f in flows.items() if net.branch(k).to_bus == b)
        err = max(err, abs(inj.get(b, 0.0) - (out - inn)))
    return err


def random_island(rng):
    """Connected 5-bus island with two generators and random rate limits."""
    edges = [(0, 1), (1, 2), (2, 3), (3, 4)]
    extra = [(0, 2), (1, 3), (2, 4), (0, 4), (1, 4)]
    for k in rng.permutation(len(extra))[:int(rng.integers(0, 4))]:
        edges.append(extra[k])
    loads = {i: float(rng.uniform(5, 40)) for i in range(5)}
    gens = [(0, 0.0, float(rng.uniform(40, 120)), float(rng.uniform(1, 5))),
            (int(rng.integers(1, 5)), 0.0, float(rng.uniform(40, 120)), float(rng.uniform(1, 5)))]
    branches = [(a, b, float(rng.uniform(0.05, 0.3)), float(rng.choice([0, rng.uniform(20, 80)])))
                for a, b in edges]
    return make_net(loads, gens, branches)


def feasible_objective(net, gen):
    """Cost of ``gen`` when it satisfies every constraint, else None."""
    g = np.asarray(gen)
    on = net.generators
    if np.any(g < [x.p_min for x in on]) or np.any(g > [x.p_max for x in on]):
        return None
    inj = {b.id: -b.load_p for b in net.buses}
    for x, p in zip(on, g):
        inj[x.bus_id] += p
    if abs(sum(inj.values())) > 1e-9:
        return None
    snap = dc_power_flow(net, inj, net.buses[0].id)
    for br in net.branches:
        if br.rate > 0 and abs(snap.flows[br.id]) > br.rate + 1e-9:
            return None
    return float(sum(x.marginal_cost() * p for x, p in zip(on, g)))


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance(capsys):
    """Print ``criterion N: PASS|FAIL ...`` immediately and keep it for the summary."""
    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[n] = line
        with capsys.disabled():
            print("\n" + line, flush=True)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
