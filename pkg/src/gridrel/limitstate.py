"""Component-state sampling, limit-state evaluation, and exact enumeration."""

from __future__ import annotations

import csv
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng
from .cascade import CascadeConfig, run_cascade
from .netmodel import PowerNetwork

BLOCK = 1024  # population rows per RNG substream
MAX_ENUMERATION_DIM = 25


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class FailureModel:
    """Independent Bernoulli failure probabilities, one per component."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.probs)
        if not p:
            raise ValueError("failure model needs at least one component")
        if any(not 0.0 <= v <= 1.0 for v in p):
            raise ValueError("failure probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, p: float, n: int) -> "FailureModel":
        return cls((p,) * n)

    @property
    def n(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs)

    def log_pmf(self, X: np.ndarray) -> np.ndarray:
        p = self.as_array()
        X = np.atleast_2d(X)
        with np.errstate(divide="ignore"):
            return X @ np.log(p) + (1 - X) @ np.log1p(-p)


def sample_population(n: int, fm: FailureModel, seed: int, start: int = 0) -> np.ndarray:
    """Rows ``start .. start+n-1`` of the seed's infinite Bernoulli population.

    Rows are generated in blocks of ``BLOCK`` from substreams keyed by
    ``(seed, block)``, so any row is reproducible independently of how the
    population was grown.
    """
    if n < 1:
        raise ValueError("population size must be >= 1")
    p = fm.as_array()
    stop = start + n
    out = np.empty((n, fm.n), dtype=np.uint8)
    for blk in range(start // BLOCK, (stop - 1) // BLOCK + 1):
        u = rng.substream(seed, "population", blk).random((BLOCK, fm.n))
        rows = (u < p).astype(np.uint8)
        lo, hi = max(start, blk * BLOCK), min(stop, (blk + 1) * BLOCK)
        out[lo - start:hi - start] = rows[lo - blk * BLOCK:hi - blk * BLOCK]
    return out


@dataclass(frozen=True)
class EvaluatedSample:
    x: tuple[int, ...]
    loss: float
    g: float
    indicator: int


class LimitState:
    """``g(x) = threshold - loss(x)``; failure iff ``g <= 0``."""

    threshold: float
    n: int

    def loss(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def loss_many(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.loss(row) for row in np.atleast_2d(X)], dtype=float)

    def evaluate(self, x) -> EvaluatedSample:
        x = np.asarray(x, dtype=np.uint8)
        loss = float(self.loss(x))
        g = self.threshold - loss
        return EvaluatedSample(tuple(int(v) for v in x), loss, g, int(g <= 0))


@dataclass(frozen=True)
class LinearLimitState(LimitState):
    weights: tuple[float, ...]
    threshold: float

    @property
    def n(self) -> int:
        return len(self.weights)

    def loss(self, x) -> float:
        return float(np.dot(self.weights, np.asarray(x, dtype=float)))

    def loss_many(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) @ np.asarray(self.weights)


def linear_toy_limit_state(weights: Sequence[float], threshold: float) -> LinearLimitState:
    return LinearLimitState(tuple(float(w) for w in weights), float(threshold))


@dataclass(frozen=True)
class GridLimitState(LimitState):
    """Loss = real-power loss fraction from the cascading-failure simulation."""

    network: PowerNetwork
    threshold: float
    cascade: CascadeConfig = CascadeConfig()

    @property
    def n(self) -> int:
        return self.network.n_branches

    def loss(self, x) -> float:
        return run_cascade(self.network, x, self.cascade).loss_fraction


def _loss_chunk(args):
    ls, X = args
    return ls.loss_many(X)


@dataclass
class CachedEvaluator:
    """Memoizing front end to a limit state; ``calls`` counts unique evaluations."""

    ls: LimitState
    threads: int = 1
    chunk: int = 64
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def calls(self) -> int:
        return len(self._cache)

    def is_cached(self, x) -> bool:
        return np.asarray(x, dtype=np.uint8).tobytes() in self._cache

    def losses(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.uint8))
        keys = [row.tobytes() for row in X]
        todo, seen = [], set()
        for i, k in enumerate(keys):
            if k not in self._cache and k not in seen:
                seen.add(k)
                todo.append(i)
        if todo:
            new = self._compute(X[todo])
            for i, v in zip(todo, new):
                self._cache[keys[i]] = float(v)
        return np.array([self._cache[k] for k in keys])

    def g(self, X: np.ndarray) -> np.ndarray:
        return self.ls.threshold - self.losses(X)

    def _compute(self, X: np.ndarray) -> np.ndarray:
        if self.threads <= 1 or len(X) <= self.chunk:
            return self.ls.loss_many(X)
        parts = [(self.ls, X[i:i + self.chunk]) for i in range(0, len(X), self.chunk)]
        with ProcessPoolExecutor(max_workers=self.threads) as pool:
            return np.concatenate(list(pool.map(_loss_chunk, parts)))


def evaluate_batch(ls: LimitState, X: np.ndarray, threads: int = 1) -> list[EvaluatedSample]:
    ev = CachedEvaluator(ls, threads=threads)
    X = np.atleast_2d(np.asarray(X, dtype=np.uint8))
    losses = ev.losses(X)
    out = []
    for row, loss in zip(X, losses):
        g = ls.threshold - float(loss)
        out.append(EvaluatedSample(tuple(int(v) for v in row), float(loss), g, int(g <= 0)))
    return out


def exact_pf_enumeration(ls: LimitState, fm: FailureModel) -> float:
    """Sum of state probabilities over every failing state (``n <= 25``)."""
    n = fm.n
    if n > MAX_ENUMERATION_DIM:
        raise DimensionError(f"enumeration limited to {MAX_ENUMERATION_DIM} components, got {n}")
    p = fm.as_array()
    total = 0.0
    # enumerate in chunks of the last (up to) 16 bits to bound memory
    low = min(n, 16)
    tail = ((np.arange(2 ** low)[:, None] >> np.arange(low)[::-1]) & 1).astype(np.uint8)
    for head in itertools.product((0, 1), repeat=n - low):
        X = np.hstack([np.broadcast_to(np.array(head, dtype=np.uint8), (len(tail), n - low)),
                       tail])
        g = ls.threshold - ls.loss_many(X)
        prob = np.prod(np.where(X == 1, p, 1.0 - p), axis=1)
        total += float(prob[g <= 0].sum())
    return total


def write_samples_csv(path, X: np.ndarray, losses: np.ndarray, threshold: float,
                      indices=None, header_lines: Sequence[str] = ()) -> None:
    """Stream evaluated samples as ``sample_index, bits, loss, g, indicator``."""
    X = np.atleast_2d(X)
    if indices is None:
        indices = range(len(X))
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["sample_index", "bits", "loss", "g", "indicator"])
        for idx, row, loss in zip(indices, X, losses):
            g = threshold - float(loss)
            w.writerow([int(idx), "".join(str(int(v)) for v in row), repr(float(loss)),
                        repr(g), int(g <= 0)])
