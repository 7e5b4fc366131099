"""Synthetic complete data and missingness mechanisms with rate calibration.

Mask convention: R[i, j] = 1 when x_ij is observed.  Every mechanism formula
below gives the probability that a cell goes *missing*.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .dataset import Dataset
from .distributions import sigmoid

log = logging.getLogger(__name__)

KINDS = ("MCAR", "MAR", "MNAR", "SelfMask", "LogisticMech", "SeqLogistic")
MAX_REDRAWS = 100


class CalibrationError(RuntimeError):
    pass


@dataclass
class GenSpec:
    n: int
    mu: np.ndarray
    Sigma: np.ndarray
    beta: np.ndarray
    seed: int = 0

    @property
    def d(self) -> int:
        return len(self.mu)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.Sigma = np.asarray(self.Sigma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.shape != (self.d + 1,) or self.Sigma.shape != (self.d, self.d):
            raise ValueError("inconsistent generator dimensions")
        np.linalg.cholesky(self.Sigma)  # raises unless SPD


def benchmark_spec(n: int, seed: int = 0, d: int = 5) -> GenSpec:
    """Fixed benchmark truth: mu = 0, unit variances, 0.5 correlations."""
    Sigma = np.full((d, d), 0.5) + 0.5 * np.eye(d)
    beta = np.array([0.5, 1.0, -1.0, 0.5, -0.5, 1.0])
    if d != 5:
        beta = np.resize(beta[1:], d)
        beta = np.concatenate([[0.5], beta])
    return GenSpec(n, np.zeros(d), Sigma, beta, seed)


def gen_complete(spec: GenSpec):
    rng = np.random.default_rng(spec.seed)
    X = rng.multivariate_normal(spec.mu, spec.Sigma, size=spec.n, method="cholesky")
    p = sigmoid(spec.beta[0] + X @ spec.beta[1:])
    y = (rng.random(spec.n) < p).astype(np.int64)
    return X, y


@dataclass
class MechanismSpec:
    """``coef`` layout by kind (intercepts are what calibration moves):

    MCAR          scalar missing probability p
    MAR           (d, 3): intercept, slope on x_1, slope on y
    MNAR          (d, 3): intercept, slope on sum_k x_k, slope on y
    SelfMask      (d, 2): intercept, slope on x_j
    LogisticMech  (d, d+2): intercept, slopes on x_1..x_d, slope on y
    SeqLogistic   (d, 2d+2): intercept, slope on y, slopes on x_1..x_d,
                  slopes on r_1..r_d (only k > j are used)
    """

    kind: str
    coef: np.ndarray | float
    target_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mechanism {self.kind!r}; expected one of {KINDS}")
        if not 0.01 < self.target_rate < 0.99:
            raise ValueError("target rate must lie in (0.01, 0.99)")
        self.coef = np.asarray(self.coef, dtype=np.float64)
        if not np.all(np.isfinite(self.coef)):
            raise ValueError("mechanism coefficients must be finite")


def default_mechanism(kind: str, d: int, target_rate: float = 0.5, seed: int = 0,
                      coef_seed: int = 2024) -> MechanismSpec:
    """Raw (uncalibrated) coefficients for each kind.

    MAR and MNAR use the published slopes for every feature; the other kinds
    draw slopes once from a fixed seed.
    """
    crng = np.random.default_rng(coef_seed)
    if kind == "MCAR":
        coef = target_rate
    elif kind == "MAR":
        coef = np.tile([-1.0, 1.5, -0.8], (d, 1))
    elif kind == "MNAR":
        coef = np.tile([-1.0, -2.0, 0.5], (d, 1))
    elif kind == "SelfMask":
        coef = np.column_stack([np.zeros(d), np.full(d, 1.5)])
    elif kind == "LogisticMech":
        coef = np.column_stack([np.zeros(d), crng.normal(0, 0.75, (d, d)),
                                crng.normal(0, 0.75, d)])
    elif kind == "SeqLogistic":
        coef = np.column_stack([np.zeros(d), crng.normal(0, 0.75, d),
                                crng.normal(0, 0.75, (d, d)), crng.normal(0, 0.75, (d, d))])
    else:
        raise ValueError(f"unknown mechanism {kind!r}")
    return MechanismSpec(kind, coef, target_rate, seed)


def _miss_prob_static(X, y, mech: MechanismSpec) -> np.ndarray:
    """(n, d) missing probabilities for the non-sequential kinds."""
    n, d = X.shape
    c = mech.coef
    if mech.kind == "MCAR":
        return np.full((n, d), float(c))
    if mech.kind == "MAR":
        eta = c[:, 0] + np.outer(X[:, 0], c[:, 1]) + np.outer(y, c[:, 2])
    elif mech.kind == "MNAR":
        eta = c[:, 0] + np.outer(X.sum(axis=1), c[:, 1]) + np.outer(y, c[:, 2])
    elif mech.kind == "SelfMask":
        eta = c[:, 0] + X * c[:, 1]
    elif mech.kind == "LogisticMech":
        eta = c[:, 0] + X @ c[:, 1:d + 1].T + np.outer(y, c[:, d + 1])
    else:
        raise ValueError(mech.kind)
    return sigmoid(eta)


def _seq_eta_base(X, y, c):
    d = X.shape[1]
    return c[:, 0] + np.outer(y, c[:, 1]) + X @ c[:, 2:d + 2].T


def _draw_mask(X, y, mech: MechanismSpec, U: np.ndarray, base=None) -> np.ndarray:
    """Mask from uniforms U (n, d): missing iff U < p_missing."""
    n, d = X.shape
    if mech.kind != "SeqLogistic":
        return (U >= _miss_prob_static(X, y, mech)).astype(np.int8)
    c = mech.coef
    base = _seq_eta_base(X, y, c) if base is None else base
    R = np.ones((n, d), dtype=np.int8)
    for j in range(d - 1, -1, -1):
        eta = base[:, j] + R[:, j + 1:] @ c[j, d + 2 + j + 1:2 * d + 2]
        R[:, j] = U[:, j] >= sigmoid(eta)
    return R


def _redraw_independent(p, rng):
    """Redraw masks of independent cells (missing probabilities ``p``) given
    that at least one cell is observed, as up to MAX_REDRAWS rejection draws
    would, but in one pass: pick the first observed cell k with probability
    prod_{j<k} p_j (1 - p_k) / (1 - prod_j p_j), then draw the later cells
    freely. Rows whose redraws would all fail (probability prod_j p_j ^ 100)
    come back with ``found`` False."""
    n, d = p.shape
    with np.errstate(divide="ignore"):
        logp = np.log(p)
        logq = np.log1p(-p)
    log_all = logp.sum(axis=1)
    before = np.concatenate([np.zeros((n, 1)), np.cumsum(logp, axis=1)[:, :-1]], axis=1)
    logw = before + logq
    found = np.isfinite(logw.max(axis=1))
    found &= rng.random(n) >= np.exp(MAX_REDRAWS * log_all)
    w = np.exp(logw - np.where(found, logw.max(axis=1), 0.0)[:, None])
    c = np.cumsum(w, axis=1)
    k = np.minimum((rng.random(n)[:, None] * c[:, -1:] > c).sum(axis=1), d - 1)
    R = (rng.random((n, d)) >= p).astype(np.int8)
    cols = np.arange(d)
    R[cols < k[:, None]] = 0
    R[np.arange(n), k] = 1
    return R, found


def apply_mechanism(X, y, mech: MechanismSpec, seed: int | None = None) -> np.ndarray:
    """Sample R. All-missing rows are redrawn up to 100 times, then one
    uniformly chosen cell is forced observed. For the kinds with independent
    cells the redraws are sampled in closed form."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    seed = mech.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0])
    base = _seq_eta_base(X, y, mech.coef) if mech.kind == "SeqLogistic" else None
    R = _draw_mask(X, y, mech, rng.random((n, d)), base)
    bad = np.flatnonzero(R.sum(axis=1) == 0)
    if bad.size:
        redraw_rng = np.random.default_rng([seed, 1])
        if base is None:
            Rb, found = _redraw_independent(_miss_prob_static(X[bad], y[bad], mech), redraw_rng)
        else:
            U = redraw_rng.random((MAX_REDRAWS, bad.size, d))
            rep = np.tile(bad, MAX_REDRAWS)
            Rb = _draw_mask(X[rep], y[rep], mech, U.reshape(-1, d), base[rep])
            Rb = Rb.reshape(MAX_REDRAWS, bad.size, d)
            ok = Rb.sum(axis=2) > 0
            found = ok.any(axis=0)
            Rb = Rb[ok.argmax(axis=0), np.arange(bad.size)]
        R[bad[found]] = Rb[found]
        stuck = bad[~found]
        if stuck.size:
            forced = redraw_rng.integers(0, d, size=stuck.size)
            R[stuck, forced] = 1
            log.info("forced one observed cell in %d all-missing rows", stuck.size)
    return R


def mcar_cell_probability(rate: float, d: int) -> float:
    """Cell probability p whose missing rate after the all-missing repair,
    (p - p^d) / (1 - p^d), equals ``rate``."""
    if d < 2:
        raise CalibrationError("with one feature every missing cell is repaired")

    def achieved(p):
        return (p - p ** d) / (1.0 - p ** d) - rate

    hi = 1.0 - 1e-12
    if achieved(hi) < 0:
        raise CalibrationError(f"rate {rate} unreachable with d={d}")
    return float(brentq(achieved, rate, hi, xtol=1e-15))


def calibrate_intercepts(X, y, mech: MechanismSpec, tol: float = 0.01,
                         max_steps: int = 60, max_sweeps: int = 8, n_draws: int = 8,
                         bisect_tol: float = 1e-3) -> MechanismSpec:
    """Move each feature's intercept until its missing rate is within ``tol``
    of the target.

    The rate of a probe is averaged over ``n_draws`` fixed mask draws (common
    random numbers across probes), which calibrates the expected rate rather
    than one realization. Bisection stops at ``bisect_tol``; features are swept
    again while the all-missing repair couples them. SeqLogistic features are
    calibrated in generation order d..1. MCAR is solved in closed form for its
    post-repair rate."""
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    if mech.kind == "MCAR":
        return replace(mech, coef=np.asarray(mcar_cell_probability(mech.target_rate, d)))
    coef = np.array(mech.coef, dtype=np.float64)
    order = range(d - 1, -1, -1) if mech.kind == "SeqLogistic" else range(d)
    target = mech.target_rate
    seeds = [mech.seed + 7919 * k for k in range(n_draws)]

    def rates(c):
        m = replace(mech, coef=c)
        return 1.0 - np.mean([apply_mechanism(X, y, m, seed=s).mean(axis=0) for s in seeds],
                             axis=0)

    width = 1.0
    for _ in range(max_sweeps):
        for j in order:
            def rate_j(b):
                c = coef.copy()
                c[j, 0] = b
                return rates(c)[j]

            lo, hi = coef[j, 0] - width, coef[j, 0] + width
            while rate_j(lo) > target:
                lo -= 2.0 * (hi - lo)
                if lo < -50:
                    raise CalibrationError(f"feature {j}: target not bracketed")
            while rate_j(hi) < target:
                hi += 2.0 * (hi - lo)
                if hi > 50:
                    raise CalibrationError(f"feature {j}: target not bracketed")
            for _ in range(max_steps):
                mid = 0.5 * (lo + hi)
                r = rate_j(mid)
                if abs(r - target) < bisect_tol:
                    break
                if r < target:
                    lo = mid
                else:
                    hi = mid
            coef[j, 0] = mid
        width = 0.25  # later sweeps only correct the coupling
        final = rates(coef)
        if np.all(np.abs(final - target) < 2 * bisect_tol):
            break
    if np.any(np.abs(final - target) >= tol):
        log.warning("calibration of %s stopped at rates %s", mech.kind, final)
    return replace(mech, coef=coef)


@dataclass
class SplitData:
    train: Dataset
    test: Dataset
    spec: GenSpec
    mechanism: MechanismSpec = field(repr=False)


def make_benchmark_data(n_train: int, n_test: int, kind: str, rate: float, seed: int,
                        d: int = 5) -> SplitData:
    """Train/test pair from the benchmark truth with a calibrated mechanism
    (calibrated on the training covariates, applied independently to both)."""
    spec = benchmark_spec(n_train + n_test, seed, d)
    X, y = gen_complete(spec)
    mech = default_mechanism(kind, d, rate, seed)
    mech = calibrate_intercepts(X[:n_train], y[:n_train], mech)
    R_tr = apply_mechanism(X[:n_train], y[:n_train], mech, seed=seed * 2 + 11)
    R_te = apply_mechanism(X[n_train:], y[n_train:], mech, seed=seed * 2 + 12)
    train = Dataset(X[:n_train], R_tr, y[:n_train], X_true=X[:n_train])
    test = Dataset(X[n_train:], R_te, y[n_train:], X_true=X[n_train:])
    return SplitData(train, test, spec, mech)
