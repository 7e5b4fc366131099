"""Reference estimators: mean imputation and SAEM for logistic regression with
Gaussian covariates (independence Metropolis-Hastings S-step)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import DataError, Dataset
from .distributions import DIAG_FLOOR, conditional_operator, sigmoid, unconstrained_from_chol
from .model import ModelParams

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


def mean_impute(ds: Dataset) -> np.ndarray:
    return np.where(ds.R == 1, ds.X, ds.observed_means())


def logistic_newton(X, y, beta0=None, weights=None, tol=1e-10, max_iter=100) -> np.ndarray:
    """Logistic MLE (intercept first) by Newton/IRLS with step halving.
    Optional per-row ``weights`` give a weighted log-likelihood."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    Xt = np.column_stack([np.ones(len(X)), X])
    beta = np.zeros(Xt.shape[1]) if beta0 is None else np.array(beta0, dtype=np.float64)

    def loglik(b):
        eta = Xt @ b
        return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))

    ll = loglik(beta)
    for _ in range(max_iter):
        p = sigmoid(Xt @ beta)
        grad = Xt.T @ (w * (y - p))
        H = (Xt * (w * p * (1 - p))[:, None]).T @ Xt
        step = np.linalg.solve(H + 1e-12 * np.eye(len(beta)), grad)
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new = loglik(cand)
            if ll_new >= ll - 1e-12:
                break
            t *= 0.5
        else:
            raise ConvergenceError(f"IRLS failed to increase the likelihood at beta={beta}")
        beta, ll = cand, ll_new
        if np.max(np.abs(t * step)) < tol:
            return beta
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations "
                           f"(|beta| = {np.max(np.abs(beta)):.3g}; separable data?)")


@dataclass
class MeanImputationFit:
    theta: ModelParams
    imputed: np.ndarray


def fit_mean_imputation(ds: Dataset) -> MeanImputationFit:
    Xi = mean_impute(ds)
    mu = Xi.mean(axis=0)
    Sigma = np.cov(Xi, rowvar=False, bias=True) + 1e-9 * np.eye(ds.d)
    beta = logistic_newton(Xi, ds.y)
    return MeanImputationFit(ModelParams.from_moments(beta, mu, Sigma), Xi)


def predict_mean_imputation(fitted: MeanImputationFit, ds: Dataset) -> np.ndarray:
    """Test rows are imputed with their own set's observed column means."""
    Xi = mean_impute(ds)
    b = fitted.theta.beta
    return sigmoid(b[0] + Xi @ b[1:])


# --- SAEM ------------------------------------------------------------------

@dataclass
class SaemConfig:
    max_iters: int = 120
    tol: float = 1e-4
    burn_in: int = 20
    step_exponent: float = 0.7
    mh_steps: int = 5
    seed: int = 0
    # "beta_sq": sum of squared beta changes < tol; "max_abs": largest change
    # over beta, mu and Sigma < tol
    convergence: str = "beta_sq"

    def __post_init__(self):
        if self.convergence not in ("beta_sq", "max_abs"):
            raise ValueError(f"unknown convergence rule {self.convergence!r}")
        if not 0.5 < self.step_exponent <= 1.0:
            raise ValueError("step exponent must lie in (0.5, 1]")
        if not 0 <= self.burn_in < self.max_iters:
            raise ValueError("burn-in must be smaller than max_iters")


@dataclass
class SaemState:
    beta: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    X: np.ndarray        # current imputation
    S1: np.ndarray       # smoothed sum_i x_i
    S2: np.ndarray       # smoothed sum_i x_i x_i^T
    X_bar: np.ndarray    # smoothed completed matrix
    # past imputations of the incomplete rows and their weights in the
    # smoothed surrogate for beta (weights sum to one)
    draws: list = field(default_factory=list, repr=False)
    draw_weights: list = field(default_factory=list, repr=False)

    @property
    def theta(self) -> ModelParams:
        return ModelParams(self.beta.copy(), self.mu.copy(),
                           unconstrained_from_chol(np.linalg.cholesky(self.Sigma)))


@dataclass
class SaemResult:
    theta: ModelParams
    trace: list[dict] = field(default_factory=list)
    converged: bool = False
    state: SaemState | None = None

    @property
    def n_iter(self) -> int:
        return len(self.trace)


def step_size(t: int, burn_in: int, a: float) -> float:
    """gamma_t = 1 during burn-in, then (t - burn_in)^-a (t counts from 1)."""
    return 1.0 if t <= burn_in else float(t - burn_in) ** (-a)


def _patterns(R: np.ndarray):
    keys, inv = np.unique(R, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    for k, key in enumerate(keys):
        if key.all():
            continue
        yield key.astype(bool), np.flatnonzero(inv == k)


def mh_impute(X_cur, R, y, beta, mu, Sigma, n_steps, rng):
    """Independence MH on every incomplete row; proposal = conditional prior,
    so the acceptance ratio reduces to p(y | x') / p(y | x)."""
    X = X_cur.copy()
    sign = 2.0 * np.asarray(y, dtype=np.float64) - 1.0

    def loglik(Xr, rows):
        eta = beta[0] + Xr @ beta[1:]
        return -np.logaddexp(0.0, -sign[rows] * eta)

    for obs, rows in _patterns(R):
        oi, mi = np.flatnonzero(obs), np.flatnonzero(~obs)
        A, Lc = conditional_operator(Sigma, oi, mi)
        cmean = mu[mi] + (X[np.ix_(rows, oi)] - mu[oi]) @ A.T
        Xr = X[rows]
        cur = loglik(Xr, rows)
        for _ in range(n_steps):
            prop = Xr.copy()
            prop[:, mi] = cmean + rng.standard_normal((rows.size, mi.size)) @ Lc.T
            new = loglik(prop, rows)
            accept = np.log(rng.random(rows.size)) < new - cur
            Xr[accept] = prop[accept]
            cur = np.where(accept, new, cur)
        X[rows] = Xr
    return X


def mh_impute_row(x, r, y, theta: ModelParams, config: SaemConfig, rng=None):
    """Missing entries of one row after ``config.mh_steps`` MH moves."""
    r = np.asarray(r, dtype=bool)
    if r.all():
        raise ValueError("row has no missing entries")
    rng = np.random.default_rng(config.seed if rng is None else rng)
    x0 = np.where(r, x, np.asarray(theta.mu))[None, :]
    out = mh_impute(x0, r[None, :].astype(np.int8), np.array([y]), np.asarray(theta.beta),
                    np.asarray(theta.mu), theta.cov, config.mh_steps, rng)
    return out[0, ~r]


def _moments(S1, S2, n):
    mu = S1 / n
    Sigma = S2 / n - np.outer(mu, mu)
    Sigma = 0.5 * (Sigma + Sigma.T) + DIAG_FLOOR * np.eye(len(mu))
    w, V = np.linalg.eigh(Sigma)
    if w.min() <= DIAG_FLOOR:
        Sigma = (V * np.maximum(w, DIAG_FLOOR)) @ V.T
    return mu, Sigma


def _surrogate_beta(X, y, incomplete, draws, weights, beta_prev):
    """Maximize sum_s w_s log p(y | X^(s); beta): complete rows enter once,
    incomplete rows once per retained imputation."""
    if not draws:
        return logistic_newton(X, y, beta0=beta_prev)
    complete = ~incomplete
    Xs = np.concatenate([X[complete]] + draws)
    ys = np.concatenate([y[complete]] + [y[incomplete]] * len(draws))
    ws = np.concatenate([np.ones(complete.sum())]
                        + [np.full(incomplete.sum(), w) for w in weights])
    return logistic_newton(Xs, ys, beta0=beta_prev, weights=ws)


def saem_fit(ds: Dataset, config: SaemConfig | None = None) -> SaemResult:
    """SAEM for (beta, mu, Sigma). Gaussian moments are smoothed through S1, S2;
    the logistic part of the surrogate is kept exactly as a weighted mixture of
    past imputations, pruned below ``1e-6`` relative weight."""
    config = config or SaemConfig()
    rng = np.random.default_rng(config.seed)
    n = ds.n
    y = ds.y.astype(np.float64)
    incomplete = ~ds.R.all(axis=1)
    X = mean_impute(ds)
    S1, S2, X_bar = X.sum(axis=0), X.T @ X, X.copy()
    mu, Sigma = _moments(S1, S2, n)
    beta = logistic_newton(X, y)
    draws, weights = [], []
    result = SaemResult(None)
    for t in range(1, config.max_iters + 1):
        if incomplete.any():
            X = mh_impute(X, ds.R, y, beta, mu, Sigma, config.mh_steps, rng)
        g = step_size(t, config.burn_in, config.step_exponent)
        S1 = S1 + g * (X.sum(axis=0) - S1)
        S2 = S2 + g * (X.T @ X - S2)
        X_bar = X_bar + g * (X - X_bar)
        weights = [w * (1.0 - g) for w in weights] + [g]
        draws = draws + [X[incomplete]]
        keep = [i for i, w in enumerate(weights) if w > 1e-6]
        draws, weights = [draws[i] for i in keep], [weights[i] for i in keep]
        new_mu, new_Sigma = _moments(S1, S2, n)
        new_beta = _surrogate_beta(X, y, incomplete, draws, weights, beta)
        if config.convergence == "beta_sq":
            change = float(np.sum((new_beta - beta) ** 2))
        else:
            change = max(np.max(np.abs(new_beta - beta)), np.max(np.abs(new_mu - mu)),
                         np.max(np.abs(new_Sigma - Sigma)))
        beta, mu, Sigma = new_beta, new_mu, new_Sigma
        result.trace.append({"iter": t, "gamma": g, "change": float(change),
                             "beta": beta.tolist()})
        if not incomplete.any() or (t > config.burn_in and change < config.tol):
            result.converged = True
            break
    result.state = SaemState(beta, mu, Sigma, X, S1, S2, X_bar, draws, weights)
    result.theta = result.state.theta
    return result


def saem_predict(result: SaemResult, ds: Dataset, n_draws: int = 100, seed: int = 0):
    """p(y=1 | x_obs) = E[sigmoid(beta^T x~)] under the fitted conditional
    Gaussian of the missing block, by Monte Carlo."""
    rng = np.random.default_rng(seed)
    st = result.state
    X = np.where(ds.R == 1, ds.X, 0.0)
    out = sigmoid(st.beta[0] + X @ st.beta[1:])
    for obs, rows in _patterns(ds.R):
        oi, mi = np.flatnonzero(obs), np.flatnonzero(~obs)
        A, Lc = conditional_operator(st.Sigma, oi, mi)
        cmean = st.mu[mi] + (X[np.ix_(rows, oi)] - st.mu[oi]) @ A.T
        eta_obs = st.beta[0] + X[np.ix_(rows, oi)] @ st.beta[1:][oi]
        draws = cmean[:, None, :] + rng.standard_normal((rows.size, n_draws, mi.size)) @ Lc.T
        out[rows] = sigmoid(eta_obs[:, None] + draws @ st.beta[1:][mi]).mean(axis=1)
    return out


def saem_imputation(result: SaemResult) -> np.ndarray:
    """SA-smoothed completed matrix (an average over the chain's draws)."""
    return result.state.X_bar
