"""Nonparametric first-hitting-time estimation for covariate-indexed Markov chains."""

__version__ = "0.1.0"
