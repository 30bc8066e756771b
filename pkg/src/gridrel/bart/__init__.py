"""Bayesian additive regression trees for binary inputs."""

from .diagnostics import NormalitySummary, residual_normality_summary
from .model import (BartEnsemble, BartHyperparams, ConfigurationError, PosteriorPrediction,
                    calibrate_lambda, fit, predict)
from .tuning import PAPER_GRID, CvScore, cv_grid_search, cv_scores, make_grid

__all__ = [
    "BartEnsemble", "BartHyperparams", "ConfigurationError", "CvScore", "NormalitySummary",
    "PAPER_GRID", "PosteriorPrediction", "calibrate_lambda", "cv_grid_search", "cv_scores",
    "fit", "make_grid", "predict", "residual_normality_summary",
]
