"""Residual diagnostics for a fitted ensemble."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import BartEnsemble, predict


@dataclass(frozen=True)
class NormalitySummary:
    residuals: np.ndarray  # sorted ascending
    ecdf: np.ndarray
    sigma: float
    ks_distance: float

    def write_csv(self, path) -> None:
        ref = _reference_cdf(self.residuals, self.sigma)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["residual", "ecdf", "normal_cdf"])
            for r, e, c in zip(self.residuals, self.ecdf, ref):
                w.writerow([repr(float(r)), repr(float(e)), repr(float(c))])


def _reference_cdf(x, sigma):
    if sigma > 0:
        return stats.norm.cdf(x, scale=sigma)
    return (np.asarray(x) >= 0).astype(float)  # point mass at zero


def residual_normality_summary(ens: BartEnsemble, X_test, y_test) -> NormalitySummary:
    """ECDF of held-out residuals and its KS distance to Normal(0, sigma_hat^2).

    ``sigma_hat^2`` is the posterior mean of the error variance; when it is zero
    (a constant fit) the reference is a point mass at zero.
    """
    y_test = np.asarray(y_test, dtype=float)
    res = np.sort(y_test - predict(ens, X_test).mean)
    n = len(res)
    ecdf = np.searchsorted(res, res, side="right") / max(n, 1)
    sigma = float(np.sqrt(np.mean(ens.sigma2_unscaled())))
    if n == 0:
        return NormalitySummary(res, ecdf, sigma, 0.0)
    if sigma > 0:
        ks = float(stats.kstest(res, "norm", args=(0.0, sigma)).statistic)
    else:
        # compare both one-sided limits of the two step functions at every jump
        left = np.searchsorted(res, res, side="left") / n
        ref_left = (res > 0).astype(float)
        ks = float(max(np.max(np.abs(ecdf - _reference_cdf(res, sigma))),
                       np.max(np.abs(left - ref_left)),
                       abs(float(np.searchsorted(res, 0.0, side="right")) / n - 1.0),
                       float(np.searchsorted(res, 0.0, side="left")) / n))
    return NormalitySummary(res, ecdf, sigma, ks)
