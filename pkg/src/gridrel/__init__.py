"""Failure-probability estimation for flow networks with adaptive BART surrogates."""

__version__ = "0.1.0"
