"""Class probabilities for rows with missing covariates.

For each candidate label c the variational posterior q(x_mis | x_obs, y=c, r)
proposes S completions. The 2S draws are pooled and, for each class, weighted by

    p(y=c | x) [p(r | x, c)] p(x_mis | x_obs) / qbar(x_mis),

where qbar is the equal mixture of the two class proposals. Sharing one sample
set makes the estimate exactly 1/2 when the label carries no information.

and P(y=1 | x_obs, r) = T_1 / (T_0 + T_1) where T_c is the mean weight.
Everything is accumulated in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import diffcore as dc
from .dataset import Dataset
from .distributions import LOG_2PI, conditional_operator, sigmoid
from .encoder import EncoderParams, encoder_forward
from .model import ConfigurationError, MissParams, ModelParams, loglik_r, loglik_y


@dataclass
class PredictConfig:
    S: int = 100
    threshold: float = 0.5
    mnar: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.S < 1:
            raise ValueError("S must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


def classify(p, threshold: float = 0.5):
    """1 iff p >= threshold (a tie goes to the positive class)."""
    out = np.asarray(p) >= threshold
    return out.astype(np.int64) if out.ndim else int(out)


def _row_noise(seed: int, row: int, S: int, d: int) -> np.ndarray:
    # one substream per row keeps single-row and batched calls identical
    return np.random.default_rng([seed, row]).standard_normal((2, S, d))


def _pattern_groups(R):
    keys, inv = np.unique(R, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    for k, key in enumerate(keys):
        yield key.astype(bool), np.flatnonzero(inv == k)


def _cond_logpdf(x, mean, Lc):
    """log N(x[i, s]; mean[i], Lc Lc^T) for x (n, S, m)."""
    n, S, m = x.shape
    diff = (x - mean[:, None, :]).reshape(-1, m)
    z = solve_triangular(Lc, diff.T, lower=True)
    quad = np.sum(z * z, axis=0).reshape(n, S)
    return -0.5 * m * LOG_2PI - np.sum(np.log(np.diag(Lc))) - 0.5 * quad


def _batched_logpdf(x, mean, L):
    """log N(x[i, s]; mean[i], L[i] L[i]^T) for x (n, S, m), L (n, m, m)."""
    m = x.shape[-1]
    diff = np.swapaxes(x - mean[:, None, :], 1, 2)
    z = np.linalg.solve(L, diff)
    logdet = np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * m * LOG_2PI - logdet[:, None] - 0.5 * np.sum(z * z, axis=1)


def class_log_terms(X, R, theta: ModelParams, phi: EncoderParams,
                    psi: MissParams | None, cfg: PredictConfig, row_ids=None,
                    return_samples: bool = False):
    """log T_c for c = 0, 1, shape (n, 2). Complete rows get the exact terms
    log p(y=c | x) [+ log p(r | x, c)].

    With ``return_samples`` also returns, per class, the completed samples
    (n, 2S, d) and their normalized log weights (n, 2S) (complete rows repeat x).
    """
    if cfg.mnar and psi is None:
        raise ConfigurationError("MNAR prediction requires missingness parameters")
    R = np.asarray(R, dtype=np.int8)
    X = np.where(R == 1, np.nan_to_num(np.asarray(X, dtype=np.float64)), 0.0)
    n, d = X.shape
    row_ids = np.arange(n) if row_ids is None else np.asarray(row_ids)
    theta = ModelParams(*(dc.value_of(v) for v in (theta.beta, theta.mu, theta.sigma_chol)))
    beta, mu = theta.beta, theta.mu
    Sigma = theta.cov
    out = np.empty((n, 2))
    samples = [np.repeat(X[:, None, :], 2 * cfg.S, axis=1) for _ in range(2)] \
        if return_samples else None
    logw = [np.full((n, 2 * cfg.S), -np.log(2 * cfg.S)) for _ in range(2)] \
        if return_samples else None

    for obs, rows in _pattern_groups(R):
        Xg, Rg = X[rows], R[rows].astype(np.float64)
        if obs.all():
            for c in (0, 1):
                t = loglik_y(np.full(rows.size, c), Xg, beta)
                if cfg.mnar:
                    t = t + loglik_r(Rg, Xg, np.full(rows.size, c), psi)
                out[rows, c] = t
            continue
        oi, mi = np.flatnonzero(obs), np.flatnonzero(~obs)
        A, Lc = conditional_operator(Sigma, oi, mi)
        cmean = mu[mi] + (Xg[:, oi] - mu[oi]) @ A.T
        eps_all = np.stack([_row_noise(cfg.seed, int(i), cfg.S, d) for i in row_ids[rows]])
        # S draws from each class proposal, pooled and weighted against their
        # equal mixture so both classes share one sample set
        draws, comps = [], []
        for c in (0, 1):
            mean, L, _ = encoder_forward(Xg, Rg, np.full(rows.size, c), phi)
            m = dc.value_of(mean)[:, mi]
            Lm = dc.value_of(L)[:, mi[:, None], mi[None, :]]
            eps = eps_all[:, c][:, :, mi]
            draws.append(m[:, None, :] + eps @ np.swapaxes(Lm, -1, -2))
            comps.append((m, Lm))
        x_mis = np.concatenate(draws, axis=1)
        logq = np.logaddexp(*(_batched_logpdf(x_mis, m, Lm) for m, Lm in comps)) - np.log(2)
        logp_mis = _cond_logpdf(x_mis, cmean, Lc)
        x_full = np.repeat(Xg[:, None, :], 2 * cfg.S, axis=1)
        x_full[:, :, mi] = x_mis
        for c in (0, 1):
            yc = np.full(rows.size, c)
            lw = loglik_y(yc[:, None], x_full, beta) + logp_mis - logq
            if cfg.mnar:
                lw = lw + loglik_r(Rg[:, None, :], x_full, yc[:, None], psi)
            lse = np.logaddexp.reduce(lw, axis=1)
            out[rows, c] = lse - np.log(2 * cfg.S)
            if return_samples:
                samples[c][rows] = x_full
                logw[c][rows] = lw - lse[:, None]
    if not np.all(np.isfinite(out)):
        raise dc.NumericError("non-finite class term in prediction")
    if return_samples:
        return out, samples, logw
    return out


def class_probabilities(X, R, theta, phi, psi, cfg: PredictConfig, row_ids=None):
    """(n, 2) array of (p(y=0), p(y=1)) from the shared log-space normalizer."""
    t = class_log_terms(X, R, theta, phi, psi, cfg, row_ids)
    z = np.logaddexp(t[:, 0], t[:, 1])
    return np.exp(t - z[:, None])


def predict_proba_batch(X, R, theta, phi, psi, cfg: PredictConfig, row_ids=None):
    """P(y=1 | x_obs, r) for every row. Complete ignorable rows are exact."""
    R = np.asarray(R, dtype=np.int8)
    t = class_log_terms(X, R, theta, phi, psi, cfg, row_ids)
    p = sigmoid(t[:, 1] - t[:, 0])
    if not cfg.mnar:
        complete = R.all(axis=1)
        if complete.any():
            Xc = np.asarray(X, dtype=np.float64)[complete]
            b = dc.value_of(theta.beta)
            p[complete] = sigmoid(b[0] + Xc @ b[1:])
    return p


def predict_proba(row, theta, phi, psi, cfg: PredictConfig, row_id: int = 0) -> float:
    """P(y=1) for one row ``(x_obs_filled, r)``."""
    x, r = row
    p = predict_proba_batch(np.asarray(x, dtype=np.float64)[None, :],
                            np.asarray(r)[None, :], theta, phi, psi, cfg, [row_id])
    return float(p[0])


def predict_dataset(ds: Dataset, fitted, cfg: PredictConfig) -> np.ndarray:
    """``fitted`` is a trainer FitResult (or anything with theta/phi/psi)."""
    return predict_proba_batch(ds.x_filled, ds.R, fitted.theta, fitted.phi,
                               fitted.psi if cfg.mnar else None, cfg)


def impute_with_labels(ds: Dataset, fitted, cfg: PredictConfig) -> np.ndarray:
    """Self-normalized importance-sampling estimate of E[x_mis | x_obs, y, r]
    using the observed labels; observed cells are returned unchanged."""
    _, samples, logw = class_log_terms(ds.x_filled, ds.R, fitted.theta, fitted.phi,
                                       fitted.psi if cfg.mnar else None, cfg,
                                       return_samples=True)
    out = ds.x_filled.copy()
    for c in (0, 1):
        rows = ds.y == c
        w = np.exp(logw[c][rows])
        est = np.einsum("ns,nsd->nd", w, samples[c][rows])
        out[rows] = np.where(ds.R[rows] == 1, out[rows], est)
    return out
