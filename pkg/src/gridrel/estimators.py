"""Reference estimators: crude Monte Carlo, subset simulation, passive surrogate training."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import rng
from .active import AnrConfig, Population, _as_evaluator, _tune, initial_sample_size
from .bart import fit, predict
from .limitstate import CachedEvaluator, FailureModel, LimitState, sample_population

log = logging.getLogger(__name__)

SWEEP_P0 = (0.1, 0.2, 0.5)
SWEEP_NL = (100, 200, 300, 500, 1000, 2000, 3000, 4000, 5000)


class ConfigurationError(ValueError):
    pass


def relative_error(p_hat: float, p_ref: float) -> float:
    """Percent deviation ``|p_hat / p_ref - 1| * 100``."""
    return abs(p_hat / p_ref - 1.0) * 100.0


# -- crude Monte Carlo --------------------------------------------------------

@dataclass(frozen=True)
class McsResult:
    pf: float
    cov: float  # nan when no failure was observed
    calls: int  # distinct states evaluated
    n: int
    failures: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cov_defined"] = self.failures > 0
        if not math.isfinite(self.cov):
            d["cov"] = None
        return d


def crude_mcs(ls: LimitState | CachedEvaluator, fm: FailureModel, n: int, seed: int,
              threads: int = 1, samples: np.ndarray | None = None) -> McsResult:
    """Failure fraction over ``n`` population draws (or over ``samples`` when given)."""
    if samples is None:
        if n < 1:
            raise ValueError("sample count must be >= 1")
        samples = sample_population(n, fm, seed)
    ev = _as_evaluator(ls, threads)
    before = ev.calls
    g = ev.g(samples)
    n = len(samples)
    failures = int(np.count_nonzero(g <= 0))
    pf = failures / n
    cov = math.sqrt((1.0 - pf) / (pf * n)) if failures else math.nan
    return McsResult(pf, cov, ev.calls - before, n, failures)


# -- subset simulation ----------------------------------------------------------

@dataclass(frozen=True)
class SubsetConfig:
    p0: float = 0.1
    n_l: int = 1000
    max_levels: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.p0 < 1:
            raise ConfigurationError("p0 must lie in (0, 1)")
        if self.n_l < 10:
            raise ConfigurationError("n_l must be >= 10")
        if self.max_levels < 1:
            raise ConfigurationError("max_levels must be >= 1")
        if self.n_seeds < 1:
            raise ConfigurationError("p0 * n_l must be >= 1")

    @property
    def n_seeds(self) -> int:
        return int(math.floor(self.p0 * self.n_l + 1e-9))


@dataclass
class SubsetResult:
    pf: float
    thresholds: list[float]
    calls: int  # limit-state invocations counted per chain step
    unique_calls: int
    acceptance_rates: list[float]
    level_fractions: list[float]
    converged: bool = True

    @property
    def levels(self) -> int:
        return len(self.thresholds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = self.levels
        return d


def mma_step(x: np.ndarray, p: np.ndarray, u_prop: np.ndarray, u_acc: np.ndarray) -> np.ndarray:
    """Component-wise Metropolis candidate for Bernoulli inputs.

    Each component proposes the other value with probability 0.5 (uniform over
    ``{0, 1}``) and takes it with probability ``min(1, pmf(new) / pmf(old))``.
    """
    flip = u_prop < 0.5
    ratio = np.where(x == 0, p / (1.0 - p), (1.0 - p) / p)
    take = flip & (u_acc < np.minimum(1.0, ratio))
    return np.where(take, 1 - x, x).astype(np.uint8)


def _advance_chains(seeds_x, seeds_g, lengths, b, p, evaluator, seed, level):
    """Run one MMA chain per seed; ``lengths[c]`` states per chain including the seed."""
    n_chain, dim = seeds_x.shape
    total = int(lengths.sum())
    out_x = np.empty((total, dim), dtype=np.uint8)
    out_g = np.empty(total)
    offs = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    steps = int(lengths.max()) - 1
    draws = [rng.substream(seed, "mma", level, c).random((max(steps, 0), 2, dim))
             for c in range(n_chain)]
    cur_x = seeds_x.copy()
    cur_g = seeds_g.copy()
    out_x[offs] = cur_x
    out_g[offs] = cur_g
    calls = accepted = 0
    for t in range(steps):
        live = np.flatnonzero(lengths > t + 1)
        up = np.stack([draws[c][t, 0] for c in live])
        ua = np.stack([draws[c][t, 1] for c in live])
        cand = mma_step(cur_x[live], p, up, ua)
        moved = np.any(cand != cur_x[live], axis=1)
        calls += len(live)
        if moved.any():
            g_c = evaluator.g(cand[moved])
            inside = g_c <= b
            rows = live[moved][inside]
            cur_x[rows] = cand[moved][inside]
            cur_g[rows] = g_c[inside]
            accepted += int(inside.sum())
        out_x[offs[live] + t + 1] = cur_x[live]
        out_g[offs[live] + t + 1] = cur_g[live]
    return out_x, out_g, calls, accepted


def subset_simulation(ls: LimitState | CachedEvaluator, fm: FailureModel,
                      cfg: SubsetConfig = SubsetConfig(), threads: int = 1) -> SubsetResult:
    """Product of conditional level probabilities over adaptively chosen thresholds.

    Each threshold is the ``n_seeds``-th smallest ``g`` of the level; states tied
    with it are kept in the conditional set, and the level's conditional
    probability is the observed share of the set rather than ``p0`` exactly.
    When ties would repeat the previous threshold it moves to the next lower
    observed value so that thresholds strictly decrease.
    """
    ev = _as_evaluator(ls, threads)
    before = ev.calls
    p = fm.as_array()
    if np.any((p <= 0) | (p >= 1)):
        raise ConfigurationError("subset simulation needs failure probabilities in (0, 1)")
    n_l, n_seeds = cfg.n_l, cfg.n_seeds
    if abs(cfg.p0 * n_l - n_seeds) > 1e-9:
        log.info("p0 * n_l = %.6g rounded down to %d seeds", cfg.p0 * n_l, n_seeds)

    x = sample_population(n_l, fm, cfg.seed)
    g = ev.g(x)
    calls = n_l
    thresholds: list[float] = []
    fractions: list[float] = []
    rates: list[float] = []
    prob = 1.0
    for level in range(cfg.max_levels):
        order = np.argsort(g, kind="stable")
        b = float(g[order[n_seeds - 1]])
        if b <= 0:
            frac = np.count_nonzero(g <= 0) / n_l
            thresholds.append(0.0)
            fractions.append(frac)
            return SubsetResult(prob * frac, thresholds, calls, ev.calls - before, rates,
                                fractions, True)
        if thresholds and b >= thresholds[-1]:
            lower = g[g < thresholds[-1]]
            if len(lower) == 0:
                log.warning("subset simulation stalled at threshold %.6g", thresholds[-1])
                break
            b = float(lower.max())
        if level == cfg.max_levels - 1:
            break
        cond = np.flatnonzero(g <= b)
        frac = len(cond) / n_l
        thresholds.append(b)
        fractions.append(frac)
        prob *= frac
        pick = rng.substream(cfg.seed, "ss-seeds", level).permutation(cond)[:n_seeds]
        pick.sort()
        k = len(pick)
        lengths = np.full(k, n_l // k, dtype=np.int64)
        lengths[: n_l % k] += 1
        x, g, c, acc = _advance_chains(x[pick], g[pick], lengths, b, p, ev, cfg.seed, level + 1)
        calls += c
        rates.append(acc / c if c else 0.0)
        log.debug("level %d threshold %.6g fraction %.4g", level + 1, b, frac)

    frac = np.count_nonzero(g <= 0) / n_l
    return SubsetResult(prob * frac, thresholds, calls, ev.calls - before, rates,
                        fractions + [frac], False)


def subset_sweep(ls, fm, seeds: Sequence[int], p_ref: float | None = None,
                 p0s: Sequence[float] = SWEEP_P0, nls: Sequence[int] = SWEEP_NL,
                 max_levels: int = 20, threads: int = 1) -> list[dict]:
    """One row per ``(p0, n_l, seed)``; the defaults give the 27-point grid."""
    rows = []
    ev = _as_evaluator(ls, threads)
    for p0, n_l in itertools.product(p0s, nls):
        for s in seeds:
            res = subset_simulation(ev, fm, SubsetConfig(p0, n_l, max_levels, s))
            rows.append({
                "p0": p0, "n_l": n_l, "seed": s, "pf": res.pf,
                "relative_error": relative_error(res.pf, p_ref) if p_ref else None,
                "total_calls": res.calls, "levels": res.levels, "converged": res.converged,
            })
    return rows


def write_sweep_csv(path, rows: Sequence[dict], header_lines: Sequence[str] = ()) -> None:
    cols = ["p0", "n_l", "seed", "pf", "relative_error", "total_calls", "levels", "converged"]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in cols})


# -- passive surrogate ---------------------------------------------------------

@dataclass
class PassiveRecord:
    iteration: int
    calls: int
    pf: float


@dataclass
class PassiveResult:
    pf: float
    calls: int
    population_size: int
    history: list[PassiveRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"pf": self.pf, "calls": self.calls, "population_size": self.population_size,
                "iterations": len(self.history)}


def passive_surrogate_run(ls: LimitState | CachedEvaluator, fm: FailureModel,
                          population: Population, schedule: Sequence[int],
                          cfg: AnrConfig = AnrConfig(), threads: int = 1) -> PassiveResult:
    """Surrogate training with uniformly random batches instead of ``U'`` selection.

    Starts from the same initial set as the adaptive run, re-tunes on the same
    period, and records ``p_hat`` after every refit.  ``schedule`` lists the
    batch sizes added after each iteration.
    """
    schedule = [int(s) for s in schedule]
    if any(s < 0 for s in schedule):
        raise ValueError("batch sizes must be >= 0")
    n_s = initial_sample_size(cfg.assumed_pf, cfg.pr_at_least_one, fm.n)
    if n_s + sum(schedule) > population.n_distinct:
        raise ValueError("schedule asks for more states than the population holds")
    ev = _as_evaluator(ls, threads)
    pop = population
    pop.evaluate(pop.initial_set(n_s, cfg.seed), ev)
    hp = _tune(pop, cfg, 0)
    history = []
    for i in range(len(schedule) + 1):
        X, y = pop.training()
        ens = fit(X, y, hp, cfg.burn_in, cfg.retained,
                  seed=rng.derive_int(cfg.seed, "passive-fit", i))
        pf = pop.pf(predict(ens, pop.states, cfg.ci_level).mean)
        history.append(PassiveRecord(i, pop.calls, pf))
        if i == len(schedule):
            break
        free = np.flatnonzero(~pop.evaluated)
        take = rng.substream(cfg.seed, "passive-batch", i).permutation(free)[:schedule[i]]
        pop.evaluate(take, ev)
        if (i + 1) % cfg.reopt_period == 0:
            hp = _tune(pop, cfg, i + 1)
    return PassiveResult(history[-1].pf, pop.calls, pop.size, history)


def write_passive_csv(path, history: Sequence[PassiveRecord],
                      header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "calls", "pf"])
        for r in history:
            w.writerow([r.iteration, r.calls, repr(r.pf)])
