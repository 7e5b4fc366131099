"""Importance-weighted ELBO, ignorable and MNAR variants, over minibatches."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .distributions import LOG_2PI, log_diag, reparam_sample
from .encoder import EncoderParams, encoder_forward
from .model import ConfigurationError, MissParams, ModelParams, joint_log_weight


@dataclass
class ObjectiveConfig:
    K: int = 5
    mnar: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class AVLRParams:
    theta: ModelParams
    phi: EncoderParams
    psi: MissParams | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"theta.{k}": v for k, v in self.theta.as_dict().items()}
        out.update({f"phi.{k}": v for k, v in self.phi.weights().items()})
        if self.psi is not None:
            out["psi.coef"] = self.psi.coef
        return out

    def replace(self, arrays: dict) -> "AVLRParams":
        """Same structure with leaves taken from ``arrays`` (arrays or Vars)."""
        theta = ModelParams(arrays["theta.beta"], arrays["theta.mu"],
                            arrays["theta.sigma_chol"])
        phi = self.phi.with_weights({k: arrays[f"phi.{k}"] for k in EncoderParams.WEIGHTS})
        psi = MissParams(arrays["psi.coef"]) if "psi.coef" in arrays else None
        return AVLRParams(theta, phi, psi)


def log_weights(y, x_filled, r, eps, params: AVLRParams, mnar: bool):
    """log w for every row and importance sample: (B, K).

    ``eps`` is (B, K, d) standard-normal noise; only entries at missing
    coordinates are used.  The variational density at the reparameterized
    sample mean + L eps equals -1/2|eps|^2 - sum log diag(L) - d_i/2 log 2pi,
    which is evaluated directly.
    """
    if mnar and params.psi is None:
        raise ConfigurationError("MNAR objective requires missingness parameters")
    y = np.asarray(y, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    x_filled = np.where(r > 0, np.nan_to_num(np.asarray(x_filled, dtype=np.float64)), 0.0)
    eps = np.asarray(eps, dtype=np.float64)
    miss = 1.0 - r
    mean, L, _ = encoder_forward(x_filled, r, y, params.phi)
    L_mm = dc.mul(L, miss[:, :, None] * miss[:, None, :])
    x_draw = reparam_sample(dc.expand_dims(mean, 1), L_mm, eps)
    x_full = dc.add(x_filled[:, None, :], dc.mul(miss[:, None, :], x_draw))
    n_miss = miss.sum(axis=-1)
    logq = dc.sub(
        dc.mul(-1.0, dc.expand_dims(dc.sum_(dc.mul(miss, log_diag(L)), axis=-1), 1)),
        0.5 * np.sum(miss[:, None, :] * eps * eps, axis=-1) + 0.5 * LOG_2PI * n_miss[:, None])
    return joint_log_weight(y[:, None], x_full, r[:, None, :], logq,
                            params.theta, params.psi, mnar)


def iwelbo_rows(y, x_filled, r, eps, params: AVLRParams, mnar: bool):
    """Per-row logsumexp(log w) - log K, shape (B,)."""
    lw = log_weights(y, x_filled, r, eps, params, mnar)
    K = dc.value_of(lw).shape[-1]
    return dc.sub(dc.logsumexp(lw, axis=-1), math.log(K))


def iwelbo_row(row, theta: ModelParams, psi: MissParams | None, phi: EncoderParams,
               noise, cfg: ObjectiveConfig):
    """IWELBO of one row ``(y, x, r)``; ``noise`` is (K, d_i) for the d_i
    missing coordinates (d_i = 0 allowed)."""
    y, x, r = row
    r = np.asarray(r, dtype=np.float64)
    d = r.size
    mis = np.flatnonzero(r == 0)
    noise = np.asarray(noise, dtype=np.float64).reshape(cfg.K, mis.size)
    eps = np.zeros((1, cfg.K, d))
    eps[0][:, mis] = noise
    params = AVLRParams(theta, phi, psi)
    out = iwelbo_rows(np.array([y]), np.asarray(x, dtype=np.float64)[None, :], r[None, :],
                      eps, params, cfg.mnar)
    return dc.getitem(out, 0)


def draw_noise(rng: np.random.Generator, n: int, K: int, d: int) -> np.ndarray:
    return rng.standard_normal((n, K, d))


def objective_batch(y, x_filled, r, params: AVLRParams, noise, cfg: ObjectiveConfig):
    """Loss = -sum of row IWELBOs and its gradient for every parameter array.

    ``noise`` is either an array (B, K, d) or a numpy Generator used to draw
    it.  Returns ``(loss, grads, row_values)``.
    """
    if cfg.mnar and params.psi is None:
        raise ConfigurationError("MNAR objective requires missingness parameters")
    r = np.asarray(r, dtype=np.float64)
    B, d = r.shape
    eps = draw_noise(noise, B, cfg.K, d) if isinstance(noise, np.random.Generator) \
        else np.asarray(noise, dtype=np.float64)
    tape = dc.Tape()
    arrays = params.arrays()
    leaves = {k: tape.var(v) for k, v in arrays.items()}
    rows = iwelbo_rows(y, x_filled, r, eps, params.replace(leaves), cfg.mnar)
    loss = dc.neg(dc.sum_(rows))
    grads = dict(zip(leaves, tape.grad(loss, list(leaves.values()))))
    return float(loss.value), grads, rows.value.copy()
