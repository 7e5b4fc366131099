"""Initialization and the minibatch Adam loop for AV-LR."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diffcore as dc
from .baselines import fit_mean_imputation
from .dataset import DataError, Dataset
from .distributions import chol_from_unconstrained, unconstrained_from_chol
from .encoder import init_encoder
from .model import MissParams, ModelParams
from .objective import AVLRParams, ObjectiveConfig, objective_batch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 256
    learning_rate: float = 1e-3
    K: int = 5
    mnar: bool = False
    seed: int = 0
    hidden: int = 128
    # start beta at the mean-imputation logistic fit instead of zero
    warm_start: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 \
                or self.K < 1 or self.hidden < 1:
            raise ValueError(f"invalid training configuration {self}")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)      # mean -IWELBO per row
    seconds: list[float] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.loss)


@dataclass
class FitResult:
    params: AVLRParams
    history: TrainHistory
    config: TrainConfig

    @property
    def theta(self) -> ModelParams:
        return self.params.theta

    @property
    def phi(self):
        return self.params.phi

    @property
    def psi(self):
        return self.params.psi


def column_scaling(ds: Dataset):
    shift = ds.observed_means()
    cnt = ds.R.sum(axis=0)
    var = (np.where(ds.R == 1, ds.x_filled - shift, 0.0) ** 2).sum(axis=0) / cnt
    scale = np.sqrt(var)
    scale[~(scale > 1e-12)] = 1.0
    return shift, scale


def init_params(ds: Dataset, cfg: TrainConfig) -> AVLRParams:
    """beta = 0, moments of the mean-imputed matrix, fresh encoder, psi = 0."""
    if ds.n == 0:
        raise DataError("empty dataset")
    mu0 = ds.observed_means()
    imputed = np.where(ds.R == 1, ds.X, mu0)
    S0 = np.atleast_2d(np.cov(imputed, rowvar=False)) if ds.n > 1 \
        else np.zeros((ds.d, ds.d))
    S0 = S0 + 1e-3 * np.eye(ds.d)
    theta = ModelParams(np.zeros(ds.d + 1), mu0, unconstrained_from_chol(np.linalg.cholesky(S0)))
    rng = np.random.default_rng(cfg.seed)
    phi = init_encoder(ds.d, cfg.hidden, rng)
    phi.x_shift, phi.x_scale = column_scaling(ds)
    psi = MissParams.zeros(ds.d) if cfg.mnar else None
    return AVLRParams(theta, phi, psi)


# --- exact affine changes of covariate scale: z = (x - shift) / scale ----------

def theta_to_std(theta: ModelParams, shift, scale) -> ModelParams:
    b = np.asarray(theta.beta, dtype=np.float64)
    beta = np.concatenate([[b[0] + b[1:] @ shift], b[1:] * scale])
    L = chol_from_unconstrained(theta.sigma_chol) / scale[:, None]
    return ModelParams(beta, (theta.mu - shift) / scale, unconstrained_from_chol(L))


def theta_from_std(theta: ModelParams, shift, scale) -> ModelParams:
    b = np.asarray(theta.beta, dtype=np.float64)
    slopes = b[1:] / scale
    beta = np.concatenate([[b[0] - slopes @ shift], slopes])
    L = chol_from_unconstrained(theta.sigma_chol) * scale[:, None]
    return ModelParams(beta, shift + scale * theta.mu, unconstrained_from_chol(L))


def psi_to_std(psi: MissParams, shift, scale) -> MissParams:
    c = np.array(psi.coef, dtype=np.float64)
    d = c.shape[0]
    out = c.copy()
    out[:, 0] = c[:, 0] + c[:, 1:d + 1] @ shift
    out[:, 1:d + 1] = c[:, 1:d + 1] * scale
    return MissParams(out)


def psi_from_std(psi: MissParams, shift, scale) -> MissParams:
    c = np.array(psi.coef, dtype=np.float64)
    d = c.shape[0]
    out = c.copy()
    out[:, 1:d + 1] = c[:, 1:d + 1] / scale
    out[:, 0] = c[:, 0] - out[:, 1:d + 1] @ shift
    return MissParams(out)


def fit(ds: Dataset, cfg: TrainConfig,
        callback: Callable[[int, AVLRParams], dict] | None = None) -> FitResult:
    """Maximize the summed IWELBO with Adam on (theta, phi[, psi]) jointly.

    Training runs on standardized covariates; returned parameters are on the
    original scale. ``callback(epoch, params)`` may return per-epoch metrics.
    """
    init = init_params(ds, cfg)
    history = TrainHistory()
    if cfg.epochs == 0:
        return FitResult(init, history, cfg)
    if cfg.warm_start:
        init.theta.beta = fit_mean_imputation(ds).theta.beta.copy()
    shift, scale = init.phi.x_shift, init.phi.x_scale
    z_filled = np.where(ds.R == 1, (ds.x_filled - shift) / scale, 0.0)
    R = ds.R.astype(np.float64)
    y = ds.y.astype(np.float64)
    # -log-Jacobian of the scale change per row, to report raw-scale losses
    log_jac = R @ np.log(scale)

    z_phi = init.phi.with_weights(init.phi.weights())
    z_phi.x_shift = z_phi.x_scale = None
    params = AVLRParams(theta_to_std(init.theta, shift, scale), z_phi,
                        psi_to_std(init.psi, shift, scale) if init.psi is not None else None)
    pack = dc.ParamPack.of(params.arrays())
    flat = pack.flatten(params.arrays())
    state = dc.AdamState(lr=cfg.learning_rate)
    ocfg = ObjectiveConfig(cfg.K, cfg.mnar)
    rng = np.random.default_rng([cfg.seed, 1])

    def to_raw(p: AVLRParams) -> AVLRParams:
        phi = p.phi.with_weights(p.phi.weights())
        phi.x_shift, phi.x_scale = shift, scale
        return AVLRParams(theta_from_std(p.theta, shift, scale), phi,
                          psi_from_std(p.psi, shift, scale) if p.psi is not None else None)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(ds.n)
        total = 0.0
        for b, start in enumerate(range(0, ds.n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            params = params.replace(pack.unflatten(flat))
            loss, grads, rows = objective_batch(y[idx], z_filled[idx], R[idx], params,
                                                rng, ocfg)
            gflat = pack.flatten(grads)
            if not np.isfinite(loss) or not np.all(np.isfinite(gflat)):
                bad = np.flatnonzero(~np.isfinite(rows))
                row = int(idx[bad[0]]) if bad.size else None
                raise dc.NumericError(
                    f"non-finite objective at epoch {epoch}, batch {b}, row {row}")
            flat = adam_step_checked(flat, gflat, state)
            total += loss + log_jac[idx].sum()
        history.loss.append(total / ds.n)
        history.seconds.append(time.perf_counter() - t0)
        if callback is not None:
            history.metrics.append(callback(epoch, to_raw(params.replace(pack.unflatten(flat)))))
        log.debug("epoch %d loss %.5f", epoch, history.loss[-1])
    return FitResult(to_raw(params.replace(pack.unflatten(flat))), history, cfg)


def adam_step_checked(flat, gflat, state):
    new = dc.adam_step(flat, gflat, state)
    if not np.all(np.isfinite(new)):
        raise dc.NumericError("non-finite parameters after Adam step")
    return new
