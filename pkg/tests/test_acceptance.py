"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Tolerances and runtime budgets are pinned here; the benchmark runs take a few
minutes in total on one core.
"""

import math
import time

import numpy as np
from scipy.special import expit

from avlr import diffcore as dc
from avlr.baselines import SaemConfig, logistic_newton, saem_fit
from avlr.dataset import Dataset
from avlr.datagen import (KINDS, apply_mechanism, benchmark_spec, calibrate_intercepts,
                          default_mechanism, gen_complete, make_benchmark_data)
from avlr.distributions import gaussian_condition, mvn_logpdf
from avlr.encoder import init_encoder
from avlr.harness import ExperimentConfig, ignorable_vs_mnar, run_benchmark
from avlr.metrics import auc
from avlr.model import ModelParams
from avlr.objective import ObjectiveConfig, iwelbo_rows, objective_batch
from avlr.predictor import PredictConfig, class_probabilities, predict_proba_batch
from oracles import dense_mvn_logpdf, logistic_normal_logp, random_spd
from test_objective import B0, B1, MU, SD, batch, one_d_params, random_params


def test_gradient_correctness(criterion):
    t0 = time.perf_counter()
    d, K = 3, 2
    worst = 0.0
    for draw in range(20):
        mnar = draw % 2 == 1
        y, X, R = batch(d, 4, 100 + draw)
        params = random_params(d, mnar, 200 + draw)
        eps = np.random.default_rng(300 + draw).standard_normal((4, K, d))
        cfg = ObjectiveConfig(K=K, mnar=mnar)
        _, grads, _ = objective_batch(y, X, R, params, eps, cfg)
        arrays = params.arrays()
        for name, val in arrays.items():
            def f(v, name=name):
                # value-only path: plain arrays never touch the tape
                a = dict(arrays)
                a[name] = v
                return -np.sum(iwelbo_rows(y, X, R, eps, params.replace(a), mnar))
            worst = max(worst, dc.relative_error(grads[name], dc.finite_difference(f, val)))
    secs = time.perf_counter() - t0
    criterion(1, worst < 1e-4 and secs < 10,
              f"max relative gradient error {worst:.2e} (< 1e-4) in {secs:.1f}s (< 10s)")


def _bound(K, n, seed):
    eps = np.random.default_rng(seed).standard_normal((n, K, 1))
    return iwelbo_rows(np.ones(n), np.zeros((n, 1)), np.zeros((n, 1)), eps,
                       one_d_params(q_mean=1.0, q_sd=1.0), False)


def test_bound_against_quadrature(criterion):
    t0 = time.perf_counter()
    logp = logistic_normal_logp(1, B0, B1, MU, SD)
    v = _bound(64, 10_000, 1)
    mean, se = v.mean(), v.std(ddof=1) / math.sqrt(v.size)
    secs = time.perf_counter() - t0
    ok = logp - 0.02 <= mean <= logp + 2 * se and secs < 30
    criterion(2, ok, f"K=64 mean bound {mean:.5f} vs log p {logp:.5f} "
                     f"(band [{logp - 0.02:.5f}, {logp + 2 * se:.5f}]) in {secs:.1f}s")


def test_bound_monotone_in_k(criterion):
    k1, k16 = _bound(1, 200, 2), _bound(16, 200, 3)
    se = k1.std(ddof=1) / math.sqrt(200)
    criterion(3, k16.mean() >= k1.mean() - se,
              f"mean bound K=16 {k16.mean():.4f} >= K=1 {k1.mean():.4f} - 1 SE ({se:.4f})")


def test_mcar_benchmark(criterion):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(mechanism="MCAR", rate=0.5, reps=5, methods=["avlr", "mean"])
    t = run_benchmark(cfg, write=False)
    secs = time.perf_counter() - t0
    rb = t.methods["avlr"]["rmse_beta"]["mean"]
    a = t.methods["avlr"]["auc"]["mean"]
    wins = sum(r["methods"]["avlr"]["rmse_beta"] < r["methods"]["mean"]["rmse_beta"]
               for r in t.reps)
    ok = rb <= 0.20 and 0.65 <= a <= 0.85 and wins >= 4 and secs < 600
    criterion(4, ok, f"RMSE_beta {rb:.4f} (<= 0.20), AUC {a:.4f} (in [0.65, 0.85]), "
                     f"beats mean imputation in {wins}/5 reps (>= 4), {secs:.0f}s (< 600s)")


def test_mnar_benchmark(criterion):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(mechanism="MNAR", rate=0.6, reps=5,
                           methods=["avlr_mnar", "saem", "mean"])
    t = run_benchmark(cfg, write=False)
    secs = time.perf_counter() - t0
    m = {k: t.methods[k]["auc"]["mean"] for k in cfg.methods}
    imp = {k: t.methods[k]["rmse_imp"]["mean"] for k in ("avlr_mnar", "mean")}
    ok = (m["avlr_mnar"] > m["saem"] and m["avlr_mnar"] > m["mean"]
          and imp["avlr_mnar"] < imp["mean"] and secs < 900)
    criterion(5, ok, f"AUC avlr_mnar {m['avlr_mnar']:.4f} vs saem {m['saem']:.4f} vs mean "
                     f"{m['mean']:.4f}; RMSE_imp {imp['avlr_mnar']:.4f} vs mean "
                     f"{imp['mean']:.4f}; {secs:.0f}s (< 900s)")


def test_ignorable_vs_mnar_gap(criterion):
    seeds = range(5)
    mnar = ignorable_vs_mnar("MNAR", 0.6, seeds)
    mcar = ignorable_vs_mnar("MCAR", 0.5, seeds)
    gap = np.mean([r["mnar"] - r["ignorable"] for r in mnar])
    parity = abs(np.mean([r["mnar"] - r["ignorable"] for r in mcar]))
    criterion(6, gap > 0.01 and parity < 0.02,
              f"MNAR 60% AUC gap {gap:+.4f} (> 0.01); MCAR 50% |gap| {parity:.4f} (< 0.02)")


def test_prediction_exact_on_complete_rows(criterion):
    rng = np.random.default_rng(7)
    d = 5
    theta = ModelParams.from_moments(rng.normal(size=d + 1), rng.normal(size=d),
                                     random_spd(d, rng))
    phi = init_encoder(d, 16, rng)
    X = rng.normal(size=(1000, d))
    R = np.ones((1000, d))
    cfg = PredictConfig(S=20)
    p = predict_proba_batch(X, R, theta, phi, None, cfg)
    err = np.max(np.abs(p - expit(theta.beta[0] + X @ theta.beta[1:])))
    P = class_probabilities(X, R, theta, phi, None, cfg)
    sum_err = np.max(np.abs(P.sum(axis=1) - 1))
    criterion(7, err <= 1e-12 and sum_err <= 1e-12,
              f"max |p - sigmoid| {err:.1e}, max |p0 + p1 - 1| {sum_err:.1e} (<= 1e-12)")


def test_saem_sanity(criterion):
    X, y = gen_complete(benchmark_spec(2000, seed=3))
    res = saem_fit(Dataset.from_complete(X, y), SaemConfig())
    exact = np.max(np.abs(res.theta.beta - logistic_newton(X, y)))
    conv = []
    for r in range(1, 6):
        sd = make_benchmark_data(2000, 500, "MCAR", 0.5, seed=r)
        conv.append(saem_fit(sd.train, SaemConfig(seed=r)))
    n_conv = sum(c.converged and c.n_iter <= 120 for c in conv)
    criterion(8, exact < 1e-6 and res.n_iter == 1 and n_conv >= 4,
              f"complete-data beta vs Newton {exact:.1e} (< 1e-6) after {res.n_iter} step; "
              f"50% MCAR converged in {n_conv}/5 reps (iterations {[c.n_iter for c in conv]})")


def test_mechanism_calibration(criterion):
    X, y = gen_complete(benchmark_spec(10_000, seed=11))
    worst = {}
    for kind in KINDS:
        for rate in (0.5, 0.6):
            cal = calibrate_intercepts(X, y, default_mechanism(kind, 5, rate, seed=1))
            R = apply_mechanism(X, y, cal, seed=12345)  # held-out mask draw
            worst[(kind, rate)] = float(np.max(np.abs((1 - R.mean(axis=0)) - rate)))
    bad = {k: v for k, v in worst.items() if v > 0.02}
    criterion(9, not bad, f"worst per-feature rate error {max(worst.values()):.4f} (<= 0.02) "
                          f"over {len(KINDS)} kinds x 2 targets; failures {bad}")


def test_distribution_oracles(criterion):
    rng = np.random.default_rng(13)
    mvn_err = 0.0
    cond_err = 0.0
    for d in range(1, 5):
        for _ in range(5):
            mu, S, x = rng.normal(size=d), random_spd(d, rng), rng.normal(size=d)
            ref = dense_mvn_logpdf(x, mu, S)
            mvn_err = max(mvn_err, abs(mvn_logpdf(x, mu, np.linalg.cholesky(S)) - ref) / abs(ref))
            if d > 1:
                obs = np.sort(rng.choice(d, size=rng.integers(1, d), replace=False))
                mis = np.setdiff1d(np.arange(d), obs)
                c = gaussian_condition(mu, np.linalg.cholesky(S), obs, x[obs])
                joint = (dense_mvn_logpdf(x[obs], mu[obs], S[np.ix_(obs, obs)])
                         + dense_mvn_logpdf(x[mis], c.mean, c.chol @ c.chol.T))
                cond_err = max(cond_err, abs(joint - ref) / abs(ref))
    s = np.round(rng.random(200), 2)
    lab = rng.integers(0, 2, 200)
    pos, neg = s[lab == 1], s[lab == 0]
    brute = sum(1.0 if a > b else 0.5 if a == b else 0.0
                for a in pos for b in neg) / (len(pos) * len(neg))
    ok = mvn_err < 1e-10 and cond_err < 1e-10 and auc(s, lab) == brute
    criterion(10, ok, f"mvn_logpdf rel err {mvn_err:.1e}, conditioning identity rel err "
                      f"{cond_err:.1e} (< 1e-10); AUC vs brute force exact: {auc(s, lab) == brute}")
