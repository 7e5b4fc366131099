"""Amortized inference network q(x_mis | x_obs, y, r).

One tanh hidden layer maps [x zero-filled, r, y] (length 2d+1) to a full
d-dimensional mean and a full unconstrained Cholesky vector; each row keeps
only the entries indexed by its missing coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .distributions import (DIAG_FLOOR, chol_from_unconstrained, mvn_logpdf,
                            reparam_sample, tri_size)


@dataclass
class EncoderParams:
    W1: np.ndarray
    b1: np.ndarray
    W_mean: np.ndarray
    b_mean: np.ndarray
    W_chol: np.ndarray
    b_chol: np.ndarray
    # input standardization; outputs are mapped back to the raw scale
    x_shift: np.ndarray | None = field(default=None)
    x_scale: np.ndarray | None = field(default=None)

    WEIGHTS = ("W1", "b1", "W_mean", "b_mean", "W_chol", "b_chol")

    @property
    def d(self) -> int:
        return dc.value_of(self.W_mean).shape[0]

    @property
    def hidden(self) -> int:
        return dc.value_of(self.W1).shape[0]

    def weights(self) -> dict:
        return {k: getattr(self, k) for k in self.WEIGHTS}

    def with_weights(self, w: dict) -> "EncoderParams":
        return EncoderParams(**w, x_shift=self.x_shift, x_scale=self.x_scale)


def _glorot(rng, fan_out, fan_in):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


def init_encoder(d: int, hidden: int = 128, rng=None) -> EncoderParams:
    if hidden < 1 or d < 1:
        raise ValueError("hidden width and d must be >= 1")
    rng = np.random.default_rng(rng)
    t = tri_size(d)
    return EncoderParams(
        W1=_glorot(rng, hidden, 2 * d + 1), b1=np.zeros(hidden),
        W_mean=_glorot(rng, d, hidden), b_mean=np.zeros(d),
        W_chol=_glorot(rng, t, hidden), b_chol=np.zeros(t),
    )


def encoder_input(x_obs_filled, r, y, phi: EncoderParams) -> np.ndarray:
    x = np.asarray(x_obs_filled, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if phi.x_shift is not None:
        x = (x - phi.x_shift) / phi.x_scale
    x = x * r
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), x.shape[:-1])[..., None]
    return np.concatenate([x, r, y], axis=-1)


def encoder_forward(x_obs_filled, r, y, phi: EncoderParams):
    """Full-d posterior mean (..., d) and factor (..., d, d) on the raw scale."""
    inp = encoder_input(x_obs_filled, r, y, phi)
    if inp.shape[-1] != dc.value_of(phi.W1).shape[1]:
        raise dc.DimensionError(
            f"encoder expects input length {dc.value_of(phi.W1).shape[1]}, got {inp.shape[-1]}")
    h = dc.tanh_act(dc.affine(inp, phi.W1, phi.b1))
    mean = dc.affine(h, phi.W_mean, phi.b_mean)
    ell = dc.affine(h, phi.W_chol, phi.b_chol)
    L = chol_from_unconstrained(ell)
    if phi.x_shift is not None:
        mean = dc.add(phi.x_shift, dc.mul(phi.x_scale, mean))
        L = dc.mul(phi.x_scale[:, None], L)
    return mean, L, ell


@dataclass
class VariationalPosterior:
    mis_idx: np.ndarray
    mean: np.ndarray
    chol: np.ndarray
    row: int | None = None

    @property
    def dim(self) -> int:
        return int(self.mis_idx.size)


def restrict(mean, L, mis_idx):
    """Principal-submatrix restriction of a full posterior to ``mis_idx``."""
    mis_idx = np.asarray(mis_idx, dtype=np.intp)
    m = dc.take(mean, mis_idx, axis=-1)
    Lr = dc.getitem(L, (Ellipsis, mis_idx[:, None], mis_idx[None, :]))
    # the full factor's diagonal is already floored, so the submatrix keeps it
    assert np.all(np.diagonal(dc.value_of(Lr), axis1=-2, axis2=-1) >= DIAG_FLOOR)
    return m, Lr


def encode(x_obs_filled, r, y, phi: EncoderParams, row=None) -> VariationalPosterior:
    r = np.asarray(r)
    mis_idx = np.flatnonzero(r == 0)
    if mis_idx.size == 0:
        raise ValueError("row has no missing coordinates; bypass the encoder")
    mean, L, _ = encoder_forward(x_obs_filled, r, y, phi)
    m, Lr = restrict(mean, L, mis_idx)
    return VariationalPosterior(mis_idx, m, Lr, row)


def q_logpdf(post: VariationalPosterior, x_mis):
    if dc.value_of(x_mis).shape[-1] != post.dim:
        raise dc.DimensionError("x_mis does not match the posterior dimension")
    return mvn_logpdf(x_mis, post.mean, post.chol)


def sample_posterior(post: VariationalPosterior, eps):
    return reparam_sample(post.mean, post.chol, eps)
