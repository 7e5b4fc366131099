"""Generative model: logistic outcome, Gaussian covariates and a per-feature
Bernoulli selection model for the mask.

All log-likelihoods broadcast over leading axes (rows, importance samples)
and accept tape ``Var`` parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .distributions import (bernoulli_logpmf_logit, chol_from_unconstrained,
                            mvn_logpdf, tri_size, unconstrained_from_chol)


class ConfigurationError(ValueError):
    pass


@dataclass
class ModelParams:
    """beta = (intercept, slopes); Sigma = L L^T with L from ``sigma_chol``."""

    beta: np.ndarray
    mu: np.ndarray
    sigma_chol: np.ndarray

    @property
    def d(self) -> int:
        return dc.value_of(self.mu).shape[-1]

    @property
    def chol(self):
        return chol_from_unconstrained(self.sigma_chol)

    @property
    def cov(self) -> np.ndarray:
        L = dc.value_of(self.chol)
        return L @ L.T

    @classmethod
    def from_moments(cls, beta, mu, Sigma) -> "ModelParams":
        L = np.linalg.cholesky(np.asarray(Sigma, dtype=np.float64))
        return cls(np.asarray(beta, float), np.asarray(mu, float),
                   unconstrained_from_chol(L))

    @classmethod
    def zeros(cls, d: int) -> "ModelParams":
        return cls(np.zeros(d + 1), np.zeros(d), np.zeros(tri_size(d)))

    def as_dict(self) -> dict:
        return {"beta": self.beta, "mu": self.mu, "sigma_chol": self.sigma_chol}


@dataclass
class MissParams:
    """Row j = (intercept, coefficients on x_1..x_d, coefficient on y)."""

    coef: np.ndarray

    @property
    def d(self) -> int:
        return dc.value_of(self.coef).shape[0]

    @classmethod
    def zeros(cls, d: int) -> "MissParams":
        return cls(np.zeros((d, d + 2)))


def linear_predictor(x, beta):
    return dc.add(dc.getitem(beta, 0), dc.matmul(x, dc.getitem(beta, slice(1, None))))


def loglik_y(y, x, beta):
    """log p(y | x) = -softplus((1 - 2y) * eta)."""
    sign = 1.0 - 2.0 * np.asarray(y, dtype=np.float64)
    return dc.neg(dc.softplus(dc.mul(sign, linear_predictor(x, beta))))


def missingness_logits(x, y, psi):
    """(..., d) logits of the per-feature observation probabilities."""
    coef = psi.coef if isinstance(psi, MissParams) else psi
    d = dc.value_of(coef).shape[0]
    y = np.asarray(y, dtype=np.float64)[..., None]
    intercept = dc.getitem(coef, (slice(None), 0))
    slopes = dc.getitem(coef, (slice(None), slice(1, d + 1)))
    wy = dc.getitem(coef, (slice(None), d + 1))
    return dc.add(dc.add(intercept, dc.matmul(x, dc.swapaxes(slopes))), dc.mul(y, wy))


def loglik_r(r, x, y, psi):
    """sum_j log Bernoulli(r_j | sigmoid(g_j(x, y))) with clamped probabilities."""
    logits = missingness_logits(x, y, psi)
    return dc.sum_(bernoulli_logpmf_logit(r, logits), axis=-1)


def prior_logpdf(x, theta: ModelParams):
    return mvn_logpdf(x, theta.mu, theta.chol)


def joint_log_weight(y, x_completed, r, q_logdensity, theta: ModelParams,
                     psi: MissParams | None, mnar: bool):
    """log p(y|x) + log N(x; mu, Sigma) [+ log p(r|x,y)] - log q."""
    if mnar and psi is None:
        raise ConfigurationError("MNAR weight requires missingness parameters")
    lw = dc.add(loglik_y(y, x_completed, theta.beta), prior_logpdf(x_completed, theta))
    if mnar:
        lw = dc.add(lw, loglik_r(r, x_completed, y, psi))
    return dc.sub(lw, q_logdensity)
