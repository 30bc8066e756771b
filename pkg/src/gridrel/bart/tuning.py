"""Cross-validated hyperparameter selection over a discrete grid."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import rng
from .model import BartHyperparams, ConfigurationError, fit, predict

log = logging.getLogger(__name__)

CV_BURN_IN = 250
CV_RETAINED = 250


def make_grid(m=(50, 100, 200, 400), k=(2, 3, 5), q=(0.85, 0.95), nu=(3, 5, 7),
              alpha=0.95, beta=2.0) -> tuple[BartHyperparams, ...]:
    """Cartesian grid, varying ``nu`` fastest and ``m`` slowest."""
    return tuple(BartHyperparams(m=mm, k=kk, q=qq, nu=nn, alpha=alpha, beta=beta)
                 for mm, kk, qq, nn in itertools.product(m, k, q, nu))


# 4 * 3 * 2 * 3 = 72 points
PAPER_GRID = make_grid()


@dataclass(frozen=True)
class CvScore:
    hyperparams: BartHyperparams
    rmse: float


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    perm = rng.substream(seed, "cv-folds", n).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cv_scores(X, y, grid: Sequence[BartHyperparams], folds: int = 5, seed: int = 0,
              burn_in: int = CV_BURN_IN, retained: int = CV_RETAINED) -> list[CvScore]:
    """Out-of-fold RMSE of the posterior mean for every grid point (same folds for all)."""
    grid = list(grid)
    if not grid:
        raise ConfigurationError("empty hyperparameter grid")
    X = np.asarray(X, dtype=np.uint8)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if folds < 2:
        raise ConfigurationError("need at least two folds")
    if n < folds:
        raise ValueError(f"{n} rows cannot be split into {folds} folds")
    parts = fold_indices(n, folds, seed)
    scores = []
    for g, hp in enumerate(grid):
        sq = 0.0
        for f, test in enumerate(parts):
            train = np.setdiff1d(np.arange(n), test, assume_unique=True)
            ens = fit(X[train], y[train], hp, burn_in, retained,
                      seed=rng.derive_int(seed, "cv-fit", g, f))
            err = predict(ens, X[test]).mean - y[test]
            sq += float(err @ err)
        scores.append(CvScore(hp, float(np.sqrt(sq / n))))
        log.debug("cv %s rmse=%.6g", hp, scores[-1].rmse)
    return scores


def cv_grid_search(X, y, grid: Sequence[BartHyperparams] = PAPER_GRID, folds: int = 5,
                   seed: int = 0, burn_in: int = CV_BURN_IN,
                   retained: int = CV_RETAINED) -> BartHyperparams:
    """Grid point with the smallest CV-RMSE; the earliest grid point wins ties."""
    scores = cv_scores(X, y, grid, folds, seed, burn_in, retained)
    best = min(range(len(scores)), key=lambda i: (scores[i].rmse, i))
    return scores[best].hyperparams
