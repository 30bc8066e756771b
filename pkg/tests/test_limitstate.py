import numpy as np
import pytest
from scipy.stats import binom

from gridrel.estimators import crude_mcs
from gridrel.limitstate import (CachedEvaluator, DimensionError, FailureModel, GridLimitState,
                                LinearLimitState, evaluate_batch, exact_pf_enumeration,
                                linear_toy_limit_state, sample_population, write_samples_csv)

from conftest import TOY_THRESHOLD, TOY_WEIGHTS




def test_sample_population_extremes():
    assert sample_population(50, FailureModel.uniform(1.0, 7), 3).all()
    assert not sample_population(50, FailureModel.uniform(0.0, 7), 3).any()


def test_sample_population_bit_frequency():
    X = sample_population(40_000, FailureModel.uniform(0.125, 41), 0)
    band = 3 * np.sqrt(0.125 * 0.875 / 40_000)
    assert np.all(np.abs(X.mean(axis=0) - 0.125) <= band)


def test_sample_population_is_prefix_stable():
    fm = FailureModel.uniform(0.3, 9)
    full = sample_population(5000, fm, 4)
    np.testing.assert_array_equal(sample_population(1200, fm, 4), full[:1200])
    np.testing.assert_array_equal(sample_population(700, fm, 4, start=2000), full[2000:2700])
    assert not np.array_equal(sample_population(100, fm, 5), full[:100])


def test_failure_model_validation():
    with pytest.raises(ValueError):
        FailureModel((0.1, 1.5))
    with pytest.raises(ValueError):
        FailureModel(())


def test_evaluate_boundary_counts_as_failure():
    ls = linear_toy_limit_state([0.3], 0.3)
    s = ls.evaluate([1])
    assert s.g == 0 and s.indicator == 1
    s = ls.evaluate([0])
    assert s.g == pytest.approx(0.3) and s.indicator == 0


def test_linear_toy_examples():
    ls = linear_toy_limit_state([0.2, 0.2, 0.2], 0.3)
    assert ls.evaluate([1, 1, 0]).g == pytest.approx(-0.1)
    assert ls.evaluate([1, 1, 0]).indicator == 1
    assert ls.evaluate([1, 0, 0]).g == pytest.approx(0.1)
    assert ls.evaluate([0, 1, 1]).g == pytest.approx(-0.1)
    assert ls.evaluate([1, 1, 1]).loss == pytest.approx(0.6)


def test_exact_enumeration_examples():
    single = linear_toy_limit_state([1.0], 0.5)
    assert exact_pf_enumeration(single, FailureModel.uniform(0.125, 1)) == pytest.approx(0.125)
    three = linear_toy_limit_state([0.2, 0.2, 0.2], 0.3)
    assert exact_pf_enumeration(three, FailureModel.uniform(0.5, 3)) == pytest.approx(0.5)
    assert exact_pf_enumeration(three, FailureModel.uniform(1e-9, 3)) < 1e-15
    with pytest.raises(DimensionError):
        exact_pf_enumeration(linear_toy_limit_state([0.1] * 26, 1.0), FailureModel.uniform(0.1, 26))


def test_enumeration_matches_binomial_tail_for_equal_weights():
    # 20 components of weight 0.05, threshold 0.2 -> failure iff at least 4 fail
    ls = linear_toy_limit_state([0.05] * 20, 0.2 - 1e-12)
    expect = binom.sf(3, 20, 0.1)
    assert exact_pf_enumeration(ls, FailureModel.uniform(0.1, 20)) == pytest.approx(expect, rel=1e-10)


def test_enumeration_agrees_with_crude_mcs(toy, toy_fm):
    exact = exact_pf_enumeration(toy, toy_fm)
    assert exact == pytest.approx(0.01825, abs=5e-5)
    est = crude_mcs(toy, toy_fm, 100_000, seed=1).pf
    assert abs(est - exact) <= 4 * np.sqrt(exact * (1 - exact) / 1e5)


def test_cached_evaluator_counts_unique_states(toy):
    ev = CachedEvaluator(toy)
    X = np.array([[0] * 15, [1] + [0] * 14, [0] * 15], dtype=np.uint8)
    np.testing.assert_allclose(ev.losses(X), [0.0, TOY_WEIGHTS[0], 0.0])
    assert ev.calls == 2
    ev.g(X)
    assert ev.calls == 2
    assert ev.is_cached(X[1])


def test_grid_evaluation_is_thread_independent(case30):
    ls = GridLimitState(case30, 0.15)
    X = sample_population(150, FailureModel.uniform(0.125, 41), 2)
    serial = CachedEvaluator(ls, threads=1).losses(X)
    fanned = CachedEvaluator(ls, threads=3, chunk=16).losses(X)
    np.testing.assert_array_equal(serial, fanned)
    batch = evaluate_batch(ls, X[:5])
    assert [s.loss for s in batch] == list(serial[:5])


def test_samples_csv(tmp_path, toy):
    X = np.eye(15, dtype=np.uint8)[:3]
    path = tmp_path / "s.csv"
    write_samples_csv(path, X, toy.loss_many(X), TOY_THRESHOLD, header_lines=["seed 0"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed 0"
    assert lines[1] == "sample_index,bits,loss,g,indicator"
    assert lines[2].startswith("0,100000000000000,")
    assert len(lines) == 5
