"""Constrained Bayesian optimization with bivariate Gaussian-process surrogates."""

__version__ = "0.1.0"
