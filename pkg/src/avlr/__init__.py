"""Amortized variational logistic regression with missing covariates."""

__version__ = "0.1.0"
