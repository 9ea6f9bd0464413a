"""Stratified prevalence estimation by Bayesian evidence synthesis."""

__version__ = "0.1.0"
