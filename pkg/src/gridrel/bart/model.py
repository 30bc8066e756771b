"""Sum-of-trees regression with posterior credible intervals."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaincc

from . import _kernels

FORMAT = "gridrel-bart"
FORMAT_VERSION = 1

# grow / prune / change / swap
MOVE_PROBS = np.array([0.25, 0.25, 0.40, 0.10])
VAR_FLOOR = 1e-12
PREDICT_CHUNK = 4096


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class BartHyperparams:
    m: int = 50
    k: float = 2.0
    q: float = 0.9
    nu: float = 3.0
    alpha: float = 0.95
    beta: float = 2.0

    def __post_init__(self):
        if self.m < 1:
            raise ConfigurationError("m must be >= 1")
        if self.k <= 0:
            raise ConfigurationError("k must be > 0")
        if not 0 < self.q < 1:
            raise ConfigurationError("q must lie in (0, 1)")
        if self.nu <= 0:
            raise ConfigurationError("nu must be > 0")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")

    @property
    def sigma_mu(self) -> float:
        """Prior standard deviation of each leaf value on the [-0.5, 0.5] response scale."""
        return 0.5 / (self.k * math.sqrt(self.m))


def calibrate_lambda(s2: float, nu: float, q: float, rtol: float = 1e-10) -> float:
    """Scale ``lam`` with ``P(sigma^2 <= s2) = q`` for ``sigma^2 ~ InvGamma(nu/2, nu*lam/2)``.

    ``1/sigma^2`` is Gamma(nu/2, rate=nu*lam/2), so the condition reads
    ``Q(nu/2, nu*lam/(2*s2)) = q`` with ``Q`` the upper regularized incomplete
    gamma function, which decreases in ``lam``.  Solved by bisection.
    """
    a = 0.5 * nu

    def coverage(lam):
        return gammaincc(a, nu * lam / (2.0 * s2))

    lo, hi = 0.0, s2
    while coverage(hi) > q:
        hi *= 2.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if coverage(mid) > q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class PosteriorPrediction:
    mean: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float

    @property
    def width(self) -> np.ndarray:
        return self.ci_upper - self.ci_lower


@dataclass
class BartEnsemble:
    hyperparams: BartHyperparams
    n_features: int
    y_min: float
    y_max: float
    lam: float
    burn_in: int
    retained: int
    sigma2: np.ndarray  # per kept draw, response scale
    node_var: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_value: np.ndarray
    tree_start: np.ndarray  # (retained, m) offsets into the node pool
    acceptance: dict = field(default_factory=dict)

    @property
    def y_range(self) -> float:
        return self.y_max - self.y_min

    def unscale(self, s):
        return self.y_min + (np.asarray(s) + 0.5) * self.y_range

    def draws(self, X) -> np.ndarray:
        """Unscaled sum-of-trees value per row and kept draw, shape ``(rows, retained)``."""
        X = _as_design(X, self.n_features)
        raw = _kernels.predict_draws(X, self.node_var, self.node_left, self.node_right,
                                     self.node_value, self.tree_start)
        return self.unscale(raw)

    def sigma2_unscaled(self) -> np.ndarray:
        return self.sigma2 * self.y_range ** 2

    # -- serialization -------------------------------------------------
    def _tree_nested(self, d: int, j: int) -> dict:
        base = int(self.tree_start[d, j])

        def node(k):
            v = int(self.node_var[base + k])
            if v < 0:
                return {"value": float(self.node_value[base + k])}
            return {"var": v, "left": node(int(self.node_left[base + k])),
                    "right": node(int(self.node_right[base + k]))}

        return node(0)

    def to_dict(self) -> dict:
        m = self.hyperparams.m
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "hyperparams": asdict(self.hyperparams),
            "n_features": self.n_features,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "lam": self.lam,
            "burn_in": self.burn_in,
            "retained": self.retained,
            "sigma2": self.sigma2.tolist(),
            "draws": [[self._tree_nested(d, j) for j in range(m)]
                      for d in range(self.retained)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BartEnsemble":
        if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not a gridrel-bart v1 document")
        hp = BartHyperparams(**doc["hyperparams"])
        var, lft, rgt, val = [], [], [], []
        starts = np.zeros((doc["retained"], hp.m), dtype=np.int64)

        def emit(nd, base):
            k = len(var) - base
            var.append(nd.get("var", -1))
            lft.append(-1)
            rgt.append(-1)
            val.append(nd.get("value", 0.0))
            if "var" in nd:
                lft[base + k] = emit(nd["left"], base)
                rgt[base + k] = emit(nd["right"], base)
            return k

        for d, trees in enumerate(doc["draws"]):
            for j, tree in enumerate(trees):
                starts[d, j] = len(var)
                emit(tree, len(var))
        return cls(hyperparams=hp, n_features=doc["n_features"], y_min=doc["y_min"],
                   y_max=doc["y_max"], lam=doc["lam"], burn_in=doc["burn_in"],
                   retained=doc["retained"], sigma2=np.asarray(doc["sigma2"], dtype=float),
                   node_var=np.asarray(var, dtype=np.int32),
                   node_left=np.asarray(lft, dtype=np.int32),
                   node_right=np.asarray(rgt, dtype=np.int32),
                   node_value=np.asarray(val, dtype=float), tree_start=starts)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "BartEnsemble":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _as_design(X, n_features: int | None = None) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X)), dtype=np.uint8)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"design has {X.shape[1]} columns, ensemble expects {n_features}")
    return X


def fit(X, y, hp: BartHyperparams = BartHyperparams(), burn_in: int = 1000,
        retained: int = 1000, seed: int = 0) -> BartEnsemble:
    """Run the sampler on binary design ``X`` and responses ``y``.

    Responses are min-max scaled to [-0.5, 0.5]; a constant response keeps a
    zero range, so every draw unscales to that constant.
    """
    X = _as_design(X)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on the number of rows")
    if len(y) < 2:
        raise ValueError("need at least two observations")
    if burn_in < 0 or retained < 1:
        raise ConfigurationError("burn_in must be >= 0 and retained >= 1")
    y_min, y_max = float(y.min()), float(y.max())
    span = y_max - y_min
    ys = (y - y_min) / span - 0.5 if span > 0 else np.zeros_like(y)
    s2 = max(float(np.var(ys, ddof=1)), VAR_FLOOR)
    lam = calibrate_lambda(s2, hp.nu, hp.q)
    out = _kernels.run_chain(X, ys, hp.m, hp.sigma_mu, hp.alpha, hp.beta, float(hp.nu), lam,
                             s2, burn_in, retained, int(seed) & 0x7FFFFFFF, MOVE_PROBS)
    pvar, pleft, pright, pmu, starts, sig, proposed, accepted = out
    names = ("grow", "prune", "change", "swap")
    acceptance = {nm: (int(a) / int(p) if p else 0.0)
                  for nm, a, p in zip(names, accepted, proposed)}
    return BartEnsemble(hyperparams=hp, n_features=X.shape[1], y_min=y_min, y_max=y_max,
                        lam=lam, burn_in=burn_in, retained=retained, sigma2=sig,
                        node_var=pvar, node_left=pleft, node_right=pright, node_value=pmu,
                        tree_start=starts, acceptance=acceptance)


def predict(ens: BartEnsemble, X, level: float = 0.90) -> PosteriorPrediction:
    """Posterior mean and equal-tailed credible interval of f(x) for each row."""
    if not 0 <= level < 1:
        raise ValueError("credible level must lie in [0, 1)")
    X = _as_design(X, ens.n_features)
    qs = [0.5 - level / 2, 0.5 + level / 2]
    means, lows, highs = [], [], []
    for start in range(0, len(X), PREDICT_CHUNK):
        D = ens.draws(X[start:start + PREDICT_CHUNK])
        means.append(D.mean(axis=1))
        lo, hi = np.quantile(D, qs, axis=1)
        lows.append(lo)
        highs.append(hi)
    if not means:
        empty = np.empty(0)
        return PosteriorPrediction(empty, empty, empty, level)
    return PosteriorPrediction(np.concatenate(means), np.concatenate(lows),
                               np.concatenate(highs), level)
