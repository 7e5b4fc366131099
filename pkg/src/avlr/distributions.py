"""Probability primitives: sigmoid, Cholesky maps, Gaussian densities and
conditioning, clamped Bernoulli log-mass, reparameterized draws.

Cholesky factors are plain lower-triangular arrays ``(..., d, d)`` (or tape
``Var``s of that shape) with diagonal >= ``DIAG_FLOOR``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc

DIAG_FLOOR = 1e-6
PROB_FLOOR = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


def sigmoid(u):
    """1/(1+exp(-u)), branch-wise so that large |u| never overflows."""
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def tri_size(d: int) -> int:
    return d * (d + 1) // 2


def tri_dim(n: int) -> int:
    """d such that d(d+1)/2 == n, else ValueError."""
    d = int(round((math.sqrt(8 * n + 1) - 1) / 2))
    if n < 1 or tri_size(d) != n:
        raise ValueError(f"length {n} is not a triangular number")
    return d


def tril_indices(d: int):
    """Row-major lower-triangle positions and the slots of the diagonal."""
    rows, cols = np.tril_indices(d)
    diag_slots = np.flatnonzero(rows == cols)
    return rows, cols, diag_slots


def chol_from_unconstrained(ell):
    """Fill a lower-triangular factor row-major from ``ell`` (..., d(d+1)/2).

    Diagonal entries are exponentiated and floored at ``DIAG_FLOOR``.
    Differentiable; works with leading batch axes.
    """
    lv = dc.value_of(ell)
    d = tri_dim(lv.shape[-1])
    rows, cols, diag_slots = tril_indices(d)
    is_diag = rows == cols
    filled = lv.copy()
    raw_diag = np.exp(lv[..., is_diag])
    filled[..., is_diag] = np.maximum(raw_diag, DIAG_FLOOR)
    L = np.zeros(lv.shape[:-1] + (d, d))
    L[..., rows, cols] = filled
    dfill = np.ones_like(lv)
    dfill[..., is_diag] = np.where(raw_diag >= DIAG_FLOOR, raw_diag, 0.0)

    def vjp(g):
        return g[..., rows, cols] * dfill

    return dc.primitive(L, (ell,), (vjp,))


def unconstrained_from_chol(L: np.ndarray) -> np.ndarray:
    """Inverse of :func:`chol_from_unconstrained` (diagonal must be positive)."""
    L = np.asarray(L, dtype=np.float64)
    d = L.shape[-1]
    rows, cols, _ = tril_indices(d)
    ell = L[..., rows, cols].copy()
    is_diag = rows == cols
    ell[..., is_diag] = np.log(ell[..., is_diag])
    return ell


def log_diag(L):
    """log of the diagonal of L (..., d, d) -> (..., d), differentiable."""
    Lv = dc.value_of(L)
    d = Lv.shape[-1]
    idx = np.arange(d)
    dvals = Lv[..., idx, idx]

    def vjp(g):
        out = np.zeros_like(Lv)
        out[..., idx, idx] = g / dvals
        return out

    return dc.primitive(np.log(dvals), (L,), (vjp,))


def mvn_logpdf(x, mu, L):
    """log N(x; mu, L L^T). ``L`` is one (d, d) factor; x, mu broadcast over
    leading axes. Differentiable in x, mu and L."""
    Lv = dc.value_of(L)
    d = Lv.shape[-1]
    if dc.value_of(x).shape[-1] != d or dc.value_of(mu).shape[-1] != d:
        raise dc.DimensionError("mvn_logpdf: dimension mismatch")
    if d == 0:
        return np.zeros(np.broadcast_shapes(dc.value_of(x).shape,
                                            dc.value_of(mu).shape)[:-1])
    z = dc.solve_lower(L, dc.sub(x, mu))
    quad = dc.sum_(dc.square(z), axis=-1)
    return -0.5 * d * LOG_2PI - dc.sum_(log_diag(L)) - 0.5 * quad


def mvn_logpdf_batched(x: np.ndarray, mu: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Plain-numpy log density with per-row factors L (..., d, d)."""
    d = L.shape[-1]
    if d == 0:
        return np.zeros(np.broadcast_shapes(x.shape, mu.shape)[:-1])
    diff = x - mu
    Lb = np.broadcast_to(L, diff.shape[:-1] + (d, d))
    z = np.linalg.solve(Lb, diff[..., None])[..., 0]
    logdet = np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * d * LOG_2PI - logdet - 0.5 * np.sum(z * z, axis=-1)


@dataclass
class GaussianCond:
    mean: np.ndarray
    chol: np.ndarray  # (m, m), m may be 0
    mis_idx: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mis_idx.size)

    def logpdf(self, x_mis):
        if self.dim == 0:
            return 0.0
        return mvn_logpdf(x_mis, self.mean, self.chol)


def conditional_operator(Sigma: np.ndarray, obs_idx, mis_idx):
    """(A, L_c) with E[x_m|x_o] = mu_m + A (x_o - mu_o) and Cov = L_c L_c^T."""
    obs_idx = np.asarray(obs_idx, dtype=np.intp)
    mis_idx = np.asarray(mis_idx, dtype=np.intp)
    S_mm = Sigma[np.ix_(mis_idx, mis_idx)]
    if obs_idx.size == 0:
        return np.zeros((mis_idx.size, 0)), _refactor(S_mm)
    S_oo = Sigma[np.ix_(obs_idx, obs_idx)]
    S_mo = Sigma[np.ix_(mis_idx, obs_idx)]
    A = np.linalg.solve(S_oo, S_mo.T).T
    schur = S_mm - A @ S_mo.T
    return A, _refactor(schur)


def _refactor(S: np.ndarray) -> np.ndarray:
    if S.shape[0] == 0:
        return np.zeros((0, 0))
    S = 0.5 * (S + S.T)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        w = np.maximum(w, DIAG_FLOOR ** 2)
        L = np.linalg.cholesky((V * w) @ V.T)
    idx = np.arange(L.shape[0])
    L[idx, idx] = np.maximum(L[idx, idx], DIAG_FLOOR)
    return L


def gaussian_condition(mu, L, obs_idx, x_obs) -> GaussianCond:
    """Distribution of the unobserved coordinates of N(mu, L L^T) given the
    observed ones (Schur complement, re-factored)."""
    mu = np.asarray(mu, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    d = mu.size
    obs_idx = np.asarray(sorted(obs_idx), dtype=np.intp)
    x_obs = np.asarray(x_obs, dtype=np.float64)
    if x_obs.shape != (obs_idx.size,):
        raise dc.DimensionError("x_obs does not match obs_idx")
    if obs_idx.size and (obs_idx.min() < 0 or obs_idx.max() >= d):
        raise IndexError("observed index out of range")
    mis_idx = np.setdiff1d(np.arange(d), obs_idx)
    if obs_idx.size == 0:
        return GaussianCond(mu.copy(), L.copy(), mis_idx)
    if mis_idx.size == 0:
        return GaussianCond(np.zeros(0), np.zeros((0, 0)), mis_idx)
    Sigma = L @ L.T
    A, Lc = conditional_operator(Sigma, obs_idx, mis_idx)
    mean = mu[mis_idx] + A @ (x_obs - mu[obs_idx])
    return GaussianCond(mean, Lc, mis_idx)


def bernoulli_logpmf(r, p):
    """r log p + (1-r) log(1-p) with p clamped into [1e-6, 1-1e-6]."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
    r = np.asarray(r, dtype=np.float64)
    out = r * np.log(p) + (1.0 - r) * np.log1p(-p)
    return out if out.ndim else float(out)


_LOG_LO = math.log(PROB_FLOOR)
_LOG_HI = math.log1p(-PROB_FLOOR)


def bernoulli_logpmf_logit(r, logit):
    """Same as :func:`bernoulli_logpmf` with p = sigmoid(logit); differentiable.

    Clamping p is done as clamping log p (log is monotone), which keeps the
    adjoint exact on the unclamped branch.
    """
    r = np.asarray(r, dtype=np.float64)
    lp1 = dc.clip(dc.log_sigmoid(logit), _LOG_LO, _LOG_HI)
    lp0 = dc.clip(dc.log_sigmoid(dc.neg(logit)), _LOG_LO, _LOG_HI)
    return dc.add(dc.mul(r, lp1), dc.mul(1.0 - r, lp0))


def reparam_sample(mean, L, eps):
    """mean + L eps; eps (..., m) with L (m, m) or (..., m, m)."""
    mv, Lv, ev = dc.value_of(mean), dc.value_of(L), dc.value_of(eps)
    m = Lv.shape[-1]
    if mv.shape[-1] != m or ev.shape[-1] != m:
        raise dc.DimensionError("reparam_sample: dimension mismatch")
    if Lv.ndim == 2 or ev.ndim == Lv.ndim:
        # row-vector form: eps (.., K, m) @ L^T (.., m, m)
        shift = dc.matmul(eps, dc.swapaxes(L))
    else:
        shift = dc.reshape(dc.matmul(L, dc.expand_dims(eps, -1)), ev.shape)
    return dc.add(mean, shift)
