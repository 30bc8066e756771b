import math

import numpy as np
import pytest

from gridrel.active import AnrConfig, Population, initial_sample_size
from gridrel.bart import BartHyperparams
from gridrel.estimators import (SWEEP_NL, SWEEP_P0, ConfigurationError, SubsetConfig, crude_mcs,
                                mma_step, passive_surrogate_run, relative_error,
                                subset_simulation, subset_sweep, write_passive_csv,
                                write_sweep_csv)
from gridrel.limitstate import (FailureModel, exact_pf_enumeration, linear_toy_limit_state,
                                sample_population)


def test_relative_error():
    assert relative_error(0.0143, 0.0143) == 0
    assert relative_error(0.012, 0.010) == pytest.approx(20.0)


def test_crude_mcs_always_failing():
    ls = linear_toy_limit_state([0.1, 0.1], 0.0)
    res = crude_mcs(ls, FailureModel.uniform(0.3, 2), 200, seed=0)
    assert res.pf == 1.0 and res.cov == 0.0
    assert res.calls == 4  # only distinct states count


def test_crude_mcs_cov_definition():
    ls = linear_toy_limit_state([1.0], 10.0)
    res = crude_mcs(ls, FailureModel.uniform(0.3, 1), 100, seed=0)
    assert res.failures == 0 and math.isnan(res.cov)
    assert res.to_dict()["cov"] is None and not res.to_dict()["cov_defined"]
    # an estimate of 0.01 from 39,600 draws carries a COV of 0.05
    assert math.sqrt((1 - 0.01) / (0.01 * 39_600)) == pytest.approx(0.05)


def test_crude_mcs_against_enumeration(toy, toy_fm):
    exact = exact_pf_enumeration(toy, toy_fm)
    res = crude_mcs(toy, toy_fm, 100_000, seed=3)
    assert abs(res.pf - exact) <= 4 * math.sqrt(exact * (1 - exact) / 1e5)
    assert res.cov == pytest.approx(math.sqrt((1 - res.pf) / (res.pf * 1e5)))


def test_mma_step_rules():
    p = np.array([0.2, 0.2, 0.2, 0.2])
    x = np.array([0, 1, 0, 1], dtype=np.uint8)
    # no proposals
    np.testing.assert_array_equal(mma_step(x, p, np.ones(4), np.zeros(4)), x)
    # proposals everywhere: 1 -> 0 always accepted (ratio 4); 0 -> 1 only if u < 0.25
    out = mma_step(x, p, np.zeros(4), np.array([0.2, 0.99, 0.3, 0.99]))
    np.testing.assert_array_equal(out, [1, 0, 0, 0])


def test_mma_marginals_are_stationary():
    p = np.array([0.125, 0.3, 0.5])
    rng = np.random.default_rng(0)
    x = np.zeros(3, dtype=np.uint8)
    total = np.zeros(3)
    steps = 100_000
    U = rng.random((steps, 2, 3))
    for t in range(steps):
        x = mma_step(x, p, U[t, 0], U[t, 1])
        total += x
    np.testing.assert_allclose(total / steps, p, atol=0.01)


def test_subset_config_validation():
    assert SubsetConfig(0.1, 1000).n_seeds == 100
    assert SubsetConfig(0.3, 15).n_seeds == 4
    for kw in ({"p0": 0}, {"n_l": 5}, {"max_levels": 0}):
        with pytest.raises(ConfigurationError):
            SubsetConfig(**kw)
    assert len(SWEEP_P0) * len(SWEEP_NL) == 27


def test_single_level_matches_crude_mcs():
    ls = linear_toy_limit_state([0.3] * 6, 0.6)
    fm = FailureModel.uniform(0.4, 6)
    res = subset_simulation(ls, fm, SubsetConfig(0.5, 200, seed=1))
    ref = crude_mcs(ls, fm, 200, seed=1)
    assert res.levels == 1 and res.thresholds == [0.0]
    assert res.pf == ref.pf and res.calls == 200


def test_subset_levels_and_accounting(toy, toy_fm):
    cfg = SubsetConfig(0.1, 500, seed=2)
    res = subset_simulation(toy, toy_fm, cfg)
    assert res.converged
    b = res.thresholds
    assert all(x > y for x, y in zip(b, b[1:])) and b[-1] <= 0
    assert res.calls == 500 + (res.levels - 1) * (500 - cfg.n_seeds)
    assert res.unique_calls <= res.calls
    assert len(res.acceptance_rates) == res.levels - 1
    assert res.pf == pytest.approx(np.prod(res.level_fractions))
    again = subset_simulation(toy, toy_fm, cfg)
    assert again.pf == res.pf


def test_subset_max_levels_reports_nonconvergence(toy, toy_fm):
    res = subset_simulation(toy, toy_fm, SubsetConfig(0.5, 100, max_levels=1, seed=0))
    assert not res.converged


def test_subset_mean_relative_error_order(toy, toy_fm):
    exact = exact_pf_enumeration(toy, toy_fm)
    errs = [relative_error(subset_simulation(toy, toy_fm, SubsetConfig(0.1, 1000, seed=s)).pf,
                           exact) for s in range(10)]
    # a loose sanity band; the tighter acceptance check lives in the acceptance suite
    assert np.mean(errs) < 30


def test_sweep_rows_and_csv(tmp_path, toy, toy_fm):
    rows = subset_sweep(toy, toy_fm, seeds=[0, 1], p_ref=0.018, p0s=(0.1, 0.5), nls=(100,))
    assert len(rows) == 4
    assert {r["p0"] for r in rows} == {0.1, 0.5}
    write_sweep_csv(tmp_path / "s.csv", rows, ["x"])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[1].startswith("p0,n_l,seed,pf,relative_error") and len(lines) == 6


FAST = AnrConfig(assumed_pf=0.05, target_cov=0.2, grid=(BartHyperparams(m=20),),
                 burn_in=100, retained=100, population_rounding=1, seed=3)


def test_passive_schedule_accounting(toy, toy_fm, tmp_path):
    pop = Population(toy_fm, FAST.seed, FAST.population_size())
    res = passive_surrogate_run(toy, toy_fm, pop, [12, 12, 5], FAST)
    n_s = initial_sample_size(0.05, 0.9, 15)
    assert [r.calls for r in res.history] == [n_s, n_s + 12, n_s + 24, n_s + 29]
    assert res.calls == n_s + 29
    write_passive_csv(tmp_path / "p.csv", res.history)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "iteration,calls,pf"


def test_passive_empty_schedule(toy, toy_fm):
    pop = Population(toy_fm, FAST.seed, FAST.population_size())
    res = passive_surrogate_run(toy, toy_fm, pop, [], FAST)
    assert len(res.history) == 1 and 0 <= res.pf <= 1
    with pytest.raises(ValueError):
        passive_surrogate_run(toy, toy_fm, Population(toy_fm, 0, 300), [10 ** 6], FAST)
