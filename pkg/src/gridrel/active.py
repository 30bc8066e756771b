"""Adaptive surrogate-based reliability analysis (ANR-BART).

The driver draws a Monte Carlo population, evaluates a small random initial
set with the true limit state, and then alternates between fitting a BART
surrogate of ``g`` and evaluating the batch of population members whose
learning-function value ``U' = |g_hat| / CI width`` is smallest.  It stops once
the change in the batch's mean ``U'`` (relative to the population mean) has
flattened out, judged through an exponential fit of that sequence.

The population is handled as its distinct states plus multiplicities: the
limit state is deterministic, so a repeated state never needs a second
evaluation, and the call count is the number of distinct states evaluated.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import binom

from . import rng
from .bart import BartEnsemble, BartHyperparams, PAPER_GRID, cv_grid_search, fit, predict
from .limitstate import CachedEvaluator, FailureModel, LimitState, sample_population

log = logging.getLogger(__name__)

SENTINEL = sys.float_info.max
DELTA_FLOOR = 1e-12
_EPS = 1e-9


class ConfigurationError(ValueError):
    pass


# -- sizing ----------------------------------------------------------------

def _ceil(v: float) -> int:
    # guard against representation error pushing an exact integer just above itself
    return math.ceil(v - _EPS * max(1.0, abs(v)))


def required_population_size(assumed_pf: float, cov: float, rounding: int = 1) -> int:
    """Crude-MCS sample count giving coefficient of variation ``cov`` at ``assumed_pf``."""
    if not 0 < assumed_pf < 1:
        raise ConfigurationError("assumed failure probability must lie in (0, 1)")
    if cov <= 0:
        raise ConfigurationError("target COV must be > 0")
    rounding = max(1, int(rounding))
    raw = (1.0 - assumed_pf) / (assumed_pf * cov ** 2)
    return rounding * _ceil(raw / rounding)


def initial_sample_size(assumed_pf: float, pr: float, n_rv: int) -> int:
    """Smallest random set holding a failure with probability ``pr``, but at least ``n_rv``."""
    if not 0 < assumed_pf < 1 or not 0 < pr < 1:
        raise ConfigurationError("probabilities must lie in (0, 1)")
    return max(_ceil(math.log(1.0 - pr) / math.log(1.0 - assumed_pf)), int(n_rv))


def batch_size(n_initial: int, fraction: float) -> int:
    return max(1, int(math.floor(fraction * n_initial + _EPS)))


def prob_at_least_k_failures(n_s: int, assumed_pf: float, k: int) -> float:
    if k <= 0:
        return 1.0
    return float(binom.sf(k - 1, n_s, assumed_pf))


# -- learning function and stopping rule -------------------------------------

def u_prime(g_hat, ci_lower, ci_upper):
    """``|g_hat| / (ci_upper - ci_lower)``; zero-width intervals get a finite sentinel."""
    g_hat, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                          for v in (g_hat, ci_lower, ci_upper)))
    width = hi - lo
    out = np.full(g_hat.shape, SENTINEL)
    ok = width > 0
    out[ok] = np.abs(g_hat[ok]) / width[ok]
    return float(out) if out.ndim == 0 else out


def select_batch(uprime, size: int, evaluated=None, order=None) -> np.ndarray:
    """Indices of the ``size`` smallest ``U'`` among entries not yet evaluated.

    Ties go to the smaller ``order`` key (default: the index itself).
    """
    if size < 1:
        raise ConfigurationError("batch size must be >= 1")
    uprime = np.asarray(uprime, dtype=float)
    idx = np.arange(len(uprime))
    if evaluated is not None:
        idx = idx[~np.asarray(evaluated, dtype=bool)]
    key = idx if order is None else np.asarray(order)[idx]
    ranked = idx[np.lexsort((key, uprime[idx]))]
    return ranked[:size]


def delta_i(e_curr: float, e_prev: float, e_omega: float) -> float:
    if e_omega == 0:
        return math.inf
    return abs(e_curr - e_prev) / e_omega


def fit_exponential(deltas: Sequence[float], iterations: Sequence[float] | None = None):
    """Least-squares line through ``(i, ln delta_i)``; returns ``(A, B)`` of ``A exp(B i)``.

    Non-finite points are skipped; zeros are floored before the logarithm.
    """
    d = np.asarray(deltas, dtype=float)
    i = np.arange(1, len(d) + 1, dtype=float) if iterations is None else np.asarray(
        iterations, dtype=float)
    keep = np.isfinite(d)
    d, i = d[keep], i[keep]
    if len(d) < 2:
        raise ValueError("exponential fit needs at least two finite points")
    slope, intercept = np.polyfit(i, np.log(np.maximum(d, DELTA_FLOOR)), 1)
    return float(np.exp(intercept)), float(slope)


def fitted_slope(A: float, B: float, i: float) -> float:
    return A * B * math.exp(B * i)


def literal_slope_ratio(B: float) -> float:
    """Relative slope change between consecutive iterations of the fitted curve.

    It reduces to ``exp(-B) - 1``, independent of the iteration; logged only.
    """
    return math.expm1(-B)


def stopping_criterion(delta: float, A: float, B: float, eps1: float, eps2: float,
                       i: float) -> int:
    """1 when both the fitted and observed delta are below ``eps1`` and the fitted
    curve's slope at ``i`` lies in ``(-eps2, 0)``."""
    if not (math.isfinite(A) and math.isfinite(B) and math.isfinite(delta)):
        return 0
    delta_hat = A * math.exp(B * i)
    slope = fitted_slope(A, B, i)
    return int(max(delta_hat, delta) < eps1 and -eps2 < slope < 0)


def estimate_pf(g_pred, counts=None, g_true=None, evaluated=None) -> float:
    """Share of the population with ``g <= 0``.

    ``g_pred`` holds surrogate means per (distinct) state; where ``evaluated``
    is set the true ``g_true`` is used instead.  ``counts`` are multiplicities.
    """
    g = np.asarray(g_pred, dtype=float).copy()
    if evaluated is not None:
        ev = np.asarray(evaluated, dtype=bool)
        g[ev] = np.asarray(g_true, dtype=float)[ev]
    counts = np.ones(len(g), dtype=np.int64) if counts is None else np.asarray(counts)
    total = int(counts.sum())
    if total == 0:
        return 0.0
    return int(counts[g <= 0].sum()) / total


# -- configuration and results ---------------------------------------------

@dataclass(frozen=True)
class AnrConfig:
    assumed_pf: float = 0.01
    target_cov: float = 0.05
    pr_at_least_one: float = 0.9
    batch_fraction: float = 0.2
    reopt_period: int = 50
    eps1: float = 0.002
    eps2: float = 0.01
    ci_level: float = 0.90
    population_rounding: int = 1000
    seed: int = 0
    burn_in: int = 1000
    retained: int = 1000
    cv_folds: int = 5
    cv_burn_in: int = 250
    cv_retained: int = 250
    grid: tuple = PAPER_GRID
    max_halvings: int = 3
    max_iterations: int | None = None

    def __post_init__(self):
        for name in ("assumed_pf", "target_cov", "pr_at_least_one", "ci_level"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        if not 0 < self.batch_fraction <= 1:
            raise ConfigurationError("batch_fraction must lie in (0, 1]")
        if self.reopt_period < 1:
            raise ConfigurationError("reopt_period must be >= 1")
        if self.eps1 < 0 or self.eps2 < 0:
            raise ConfigurationError("eps1 and eps2 must be >= 0")
        if not self.grid:
            raise ConfigurationError("hyperparameter grid is empty")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        object.__setattr__(self, "grid", tuple(
            hp if isinstance(hp, BartHyperparams) else BartHyperparams(**hp)
            for hp in self.grid))

    def population_size(self) -> int:
        return required_population_size(self.assumed_pf, self.target_cov,
                                        self.population_rounding)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [asdict(hp) for hp in self.grid]
        return d


@dataclass
class IterationRecord:
    iteration: int
    calls: int
    delta: float
    delta_hat: float
    A: float
    B: float
    slope: float
    literal_ratio: float
    e_u_batch: float
    e_u_omega: float
    pf: float
    population: int
    hyperparams: BartHyperparams
    stop: int

    def row(self) -> dict:
        d = asdict(self)
        hp = d.pop("hyperparams")
        d.update({f"hp_{k}": v for k, v in hp.items()})
        return d


@dataclass
class RunResult:
    pf: float
    calls: int
    population_size: int
    history: list[IterationRecord] = field(default_factory=list)
    ensemble: BartEnsemble | None = None
    converged: bool = False
    exhausted: bool = False
    assumed_pf: float = 0.01
    halvings: int = 0
    evaluated_indices: np.ndarray | None = None  # first sample index of each evaluated state

    def to_dict(self) -> dict:
        last = self.history[-1] if self.history else None
        return {
            "pf": self.pf,
            "calls": self.calls,
            "population_size": self.population_size,
            "call_fraction": self.calls / self.population_size if self.population_size else 0,
            "iterations": len(self.history),
            "converged": self.converged,
            "exhausted": self.exhausted,
            "assumed_pf": self.assumed_pf,
            "halvings": self.halvings,
            "final_hyperparams": asdict(last.hyperparams) if last else None,
            "final_delta": last.delta if last else None,
            "final_slope": last.slope if last else None,
            "final_literal_ratio": last.literal_ratio if last else None,
        }


def write_history_csv(path, history: Sequence[IterationRecord],
                      header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        rows = [rec.row() for rec in history]
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_result_json(path, result: RunResult, extra: dict | None = None) -> None:
    doc = result.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- population bookkeeping ---------------------------------------------------

class Population:
    """Distinct states of a sampled population with multiplicities and true ``g``."""

    def __init__(self, fm: FailureModel, seed: int, size: int):
        self.fm = fm
        self.seed = seed
        self.samples = sample_population(size, fm, seed)
        self._index()
        self.g_true = np.full(len(self.states), np.nan)
        self.evaluated = np.zeros(len(self.states), dtype=bool)

    def _index(self):
        self.states, first, inverse, counts = np.unique(
            self.samples, axis=0, return_index=True, return_inverse=True, return_counts=True)
        self.first = first
        self.inverse = inverse.reshape(-1)
        self.counts = counts

    @property
    def size(self) -> int:
        return len(self.samples)

    @property
    def n_distinct(self) -> int:
        return len(self.states)

    @property
    def calls(self) -> int:
        return int(self.evaluated.sum())

    def extend(self, new_size: int) -> None:
        """Append fresh samples up to ``new_size``; evaluated states keep their values."""
        if new_size <= self.size:
            return
        known = {self.states[u].tobytes(): self.g_true[u]
                 for u in np.flatnonzero(self.evaluated)}
        extra = sample_population(new_size - self.size, self.fm, self.seed, start=self.size)
        self.samples = np.vstack([self.samples, extra])
        self._index()
        self.g_true = np.full(len(self.states), np.nan)
        self.evaluated = np.zeros(len(self.states), dtype=bool)
        for u, row in enumerate(self.states):
            g = known.get(row.tobytes())
            if g is not None:
                self.g_true[u] = g
                self.evaluated[u] = True

    def initial_set(self, n: int, seed: int) -> np.ndarray:
        """First ``n`` distinct states met in a uniformly random order of the samples."""
        perm = rng.substream(seed, "initial-set").permutation(self.size)
        uids = self.inverse[perm]
        _, pos = np.unique(uids, return_index=True)
        return uids[np.sort(pos)][:n]

    def evaluate(self, uids, evaluator: CachedEvaluator) -> None:
        uids = np.asarray(uids, dtype=np.int64)
        uids = uids[~self.evaluated[uids]]
        if len(uids):
            self.g_true[uids] = evaluator.g(self.states[uids])
            self.evaluated[uids] = True

    def training(self):
        ev = np.flatnonzero(self.evaluated)
        return self.states[ev], self.g_true[ev]

    def pf(self, g_pred) -> float:
        return estimate_pf(g_pred, self.counts, self.g_true, self.evaluated)


def _as_evaluator(ls, threads: int) -> CachedEvaluator:
    return ls if isinstance(ls, CachedEvaluator) else CachedEvaluator(ls, threads=threads)


def _tune(pop: Population, cfg: AnrConfig, tag: int) -> BartHyperparams:
    X, y = pop.training()
    if len(cfg.grid) == 1:
        return cfg.grid[0]
    folds = min(cfg.cv_folds, len(y))
    return cv_grid_search(X, y, cfg.grid, folds=folds, seed=rng.derive_int(cfg.seed, "cv", tag),
                          burn_in=cfg.cv_burn_in, retained=cfg.cv_retained)


# -- driver ---------------------------------------------------------------------

def run(ls: LimitState | CachedEvaluator, fm: FailureModel, cfg: AnrConfig = AnrConfig(),
        threads: int = 1, population: Population | None = None) -> RunResult:
    """Run the adaptive loop to convergence or until the population is exhausted.

    ``ls`` may be a :class:`CachedEvaluator` shared with other estimators, in
    which case already-known states cost nothing, though they still count as
    calls of this run once it selects them.
    """
    evaluator = _as_evaluator(ls, threads)
    assumed = cfg.assumed_pf
    n_mcs = cfg.population_size()
    pop = population if population is not None else Population(fm, cfg.seed, n_mcs)
    if pop.size < n_mcs:
        pop.extend(n_mcs)
    n_s = initial_sample_size(assumed, cfg.pr_at_least_one, fm.n)
    step = batch_size(n_s, cfg.batch_fraction)
    pop.evaluate(pop.initial_set(n_s, cfg.seed), evaluator)
    log.info("population %d (%d distinct), initial set %d, batch %d",
             pop.size, pop.n_distinct, pop.calls, step)

    hp = _tune(pop, cfg, 0)
    history: list[IterationRecord] = []
    deltas: list[float] = []
    e_prev = None
    halvings = 0
    converged = exhausted = draining = False
    ens = None
    i = 0
    while True:
        if pop.evaluated.all():
            exhausted = True
            break
        X, y = pop.training()
        ens = fit(X, y, hp, cfg.burn_in, cfg.retained, seed=rng.derive_int(cfg.seed, "fit", i))
        pred = predict(ens, pop.states, cfg.ci_level)
        u = u_prime(pred.mean, pred.ci_lower, pred.ci_upper)
        pf = pop.pf(pred.mean)

        finite = u < SENTINEL
        w = pop.counts[finite]
        e_omega = float(w @ u[finite] / w.sum()) if w.sum() else 0.0
        batch = select_batch(u, step, pop.evaluated, order=pop.first)
        e_batch = float(np.mean(u[batch]))

        delta = A = B = delta_hat = slope = ratio = math.nan
        stop = 0
        if e_prev is not None:
            delta = delta_i(e_batch, e_prev, e_omega)
            deltas.append(delta)
            if np.isfinite(deltas).sum() >= 2:
                A, B = fit_exponential(deltas)
                t = len(deltas)
                delta_hat = A * math.exp(B * t)
                slope = fitted_slope(A, B, t)
                ratio = literal_slope_ratio(B)
                stop = stopping_criterion(delta, A, B, cfg.eps1, cfg.eps2, t)
        e_prev = e_batch
        history.append(IterationRecord(i, pop.calls, delta, delta_hat, A, B, slope, ratio,
                                       e_batch, e_omega, pf, pop.size, hp, stop))
        log.info("iter %d calls %d pf %.6g delta %.3g stop %d", i, pop.calls, pf, delta, stop)

        if stop and not draining:
            if pf >= assumed:
                converged = True
                break
            if halvings < cfg.max_halvings:
                assumed /= 2.0
                halvings += 1
                new_size = required_population_size(assumed, cfg.target_cov,
                                                    cfg.population_rounding)
                log.info("estimate below assumed pf; assumed -> %.6g, population -> %d",
                         assumed, new_size)
                pop.extend(new_size)
                i += 1
                continue
            draining = True
            log.warning("estimate %.3g stays below the assumed %.3g after %d halvings; "
                        "continuing to exhaustion", pf, assumed, halvings)

        if cfg.max_iterations is not None and i + 1 >= cfg.max_iterations:
            break
        pop.evaluate(batch, evaluator)
        i += 1
        if i % cfg.reopt_period == 0:
            hp = _tune(pop, cfg, i)

    if exhausted:
        pf = pop.pf(np.zeros(pop.n_distinct))  # every state evaluated: exact crude MCS
    elif ens is None:
        pf = math.nan
    return RunResult(pf=pf, calls=pop.calls, population_size=pop.size, history=history,
                     ensemble=ens, converged=converged, exhausted=exhausted,
                     assumed_pf=assumed, halvings=halvings,
                     evaluated_indices=np.sort(pop.first[pop.evaluated]))
