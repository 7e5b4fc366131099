import math

import numpy as np
import pytest

from avlr import diffcore as dc
from avlr.encoder import init_encoder
from avlr.model import ConfigurationError, MissParams, ModelParams, loglik_y, prior_logpdf
from avlr.objective import (AVLRParams, ObjectiveConfig, iwelbo_row, iwelbo_rows,
                            log_weights, objective_batch)
from oracles import logistic_normal_logp, posterior_moments_1d

B0, B1, MU, SD = 0.4, 1.3, 0.5, 1.5


def one_d_params(q_mean=None, q_sd=None, seed=0):
    """1-D model; the encoder is reduced to constant heads so that q is a
    fixed Gaussian (defaults to the prior)."""
    theta = ModelParams(np.array([B0, B1]), np.array([MU]), np.array([math.log(SD)]))
    phi = init_encoder(1, 4, np.random.default_rng(seed))
    phi.W_mean[:] = 0.0
    phi.W_chol[:] = 0.0
    phi.b_mean[:] = MU if q_mean is None else q_mean
    phi.b_chol[:] = math.log(SD if q_sd is None else q_sd)
    return AVLRParams(theta, phi, None)


def bound_samples(params, K, n, seed, y=1):
    eps = np.random.default_rng(seed).standard_normal((n, K, 1))
    return iwelbo_rows(np.full(n, y), np.zeros((n, 1)), np.zeros((n, 1)), eps, params, False)


def test_k1_is_single_log_weight():
    p = one_d_params()
    eps = np.array([[[0.37]]])
    lw = log_weights(np.array([1]), np.zeros((1, 1)), np.zeros((1, 1)), eps, p, False)
    val = iwelbo_rows(np.array([1]), np.zeros((1, 1)), np.zeros((1, 1)), eps, p, False)
    assert val[0] == lw[0, 0]


def test_complete_row_independent_of_phi_and_noise():
    d = 3
    rng = np.random.default_rng(1)
    theta = ModelParams(rng.normal(size=4), rng.normal(size=3), rng.normal(0, 0.2, 6))
    x = rng.normal(size=3)
    ref = loglik_y(0, x, theta.beta) + prior_logpdf(x, theta)
    vals = []
    for s in range(3):
        phi = init_encoder(d, 6, np.random.default_rng(s))
        v = iwelbo_row((0, x, np.ones(3)), theta, None, phi,
                       np.zeros((5, 0)), ObjectiveConfig(K=5))
        vals.append(v)
    np.testing.assert_allclose(vals, ref, rtol=1e-14)


def test_bound_against_quadrature():
    logp = logistic_normal_logp(1, B0, B1, MU, SD)
    v = bound_samples(one_d_params(), K=64, n=10_000, seed=2)
    mean, se = v.mean(), v.std(ddof=1) / math.sqrt(v.size)
    assert logp - 0.01 <= mean <= logp + 2 * se


def test_bound_never_exceeds_with_poor_proposal():
    logp = logistic_normal_logp(0, B0, B1, MU, SD)
    v = bound_samples(one_d_params(q_mean=2.0, q_sd=0.8), K=4, n=10_000, seed=3, y=0)
    assert v.mean() <= logp + 2 * v.std(ddof=1) / math.sqrt(v.size)


def test_monotone_in_k():
    p = one_d_params(q_mean=1.5, q_sd=0.7)
    k1 = bound_samples(p, K=1, n=200, seed=4)
    k16 = bound_samples(p, K=16, n=200, seed=5)
    se = k1.std(ddof=1) / math.sqrt(200)
    assert k16.mean() >= k1.mean() - se


def test_matched_posterior_reduces_weight_variance():
    m, v = posterior_moments_1d(1, B0, B1, MU, SD)
    eps = np.random.default_rng(6).standard_normal((1, 4000, 1))
    args = (np.array([1]), np.zeros((1, 1)), np.zeros((1, 1)), eps)
    good = log_weights(*args, one_d_params(q_mean=m, q_sd=math.sqrt(v)), False)
    bad = log_weights(*args, one_d_params(q_mean=m - 1.5, q_sd=2.5 * math.sqrt(v)), False)
    assert np.var(good) < np.var(bad)


def test_translation_of_log_weights():
    p = one_d_params(q_mean=0.0, q_sd=1.0)
    eps = np.random.default_rng(7).standard_normal((3, 6, 1))
    args = (np.ones(3), np.zeros((3, 1)), np.zeros((3, 1)), eps)
    lw = log_weights(*args, p, False)
    base = iwelbo_rows(*args, p, False)
    np.testing.assert_allclose(dc.logsumexp(lw + 2.5, axis=-1) - math.log(6), base + 2.5,
                               atol=1e-13)


def test_mnar_without_psi_is_configuration_error():
    p = one_d_params()
    with pytest.raises(ConfigurationError):
        objective_batch(np.ones(1), np.zeros((1, 1)), np.zeros((1, 1)), p,
                        np.zeros((1, 2, 1)), ObjectiveConfig(K=2, mnar=True))


def random_params(d, mnar, seed):
    rng = np.random.default_rng(seed)
    theta = ModelParams(rng.normal(0, 0.7, d + 1), rng.normal(0, 0.5, d),
                        rng.normal(0, 0.3, d * (d + 1) // 2))
    phi = init_encoder(d, 6, rng)
    phi.b_mean = rng.normal(0, 0.3, d)
    phi.b_chol = rng.normal(0, 0.3, d * (d + 1) // 2)
    psi = MissParams(rng.normal(0, 0.5, (d, d + 2))) if mnar else None
    return AVLRParams(theta, phi, psi)


def batch(d, n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    R = (rng.random((n, d)) > 0.5).astype(float)
    R[0] = 1.0
    R[1] = 0.0
    return rng.integers(0, 2, n), X * R, R


@pytest.mark.parametrize("mnar", [False, True])
def test_batch_gradient_matches_finite_differences(mnar):
    d, K = 3, 2
    y, X, R = batch(d, 5, 8)
    params = random_params(d, mnar, 9)
    eps = np.random.default_rng(10).standard_normal((5, K, d))
    cfg = ObjectiveConfig(K=K, mnar=mnar)
    _, grads, _ = objective_batch(y, X, R, params, eps, cfg)
    arrays = params.arrays()
    for name, val in arrays.items():
        def f(v, name=name):
            a = dict(arrays)
            a[name] = v
            return objective_batch(y, X, R, params.replace(a), eps, cfg)[0]
        fd = dc.finite_difference(f, val, h=1e-6)
        assert dc.relative_error(grads[name], fd) < 1e-4, name


def test_two_rows_are_additive():
    d = 3
    y, X, R = batch(d, 2, 11)
    params = random_params(d, True, 12)
    eps = np.random.default_rng(13).standard_normal((2, 4, d))
    cfg = ObjectiveConfig(K=4, mnar=True)
    both = objective_batch(y, X, R, params, eps, cfg)[0]
    parts = sum(objective_batch(y[i:i + 1], X[i:i + 1], R[i:i + 1], params, eps[i:i + 1], cfg)[0]
                for i in range(2))
    assert both == pytest.approx(parts, abs=1e-12)


def test_complete_row_phi_gradient_is_zero():
    d = 3
    params = random_params(d, False, 14)
    x = np.random.default_rng(15).normal(size=(1, d))
    loss, grads, _ = objective_batch(np.array([1]), x, np.ones((1, d)), params,
                                     np.zeros((1, 5, d)), ObjectiveConfig(K=5))
    ref = -(loglik_y(1, x[0], params.theta.beta) + prior_logpdf(x[0], params.theta))
    assert loss == pytest.approx(ref, abs=1e-12)
    for k, g in grads.items():
        if k.startswith("phi."):
            assert not np.any(g), k


def test_single_row_helper_matches_batch():
    d = 3
    y, X, R = batch(d, 3, 16)
    params = random_params(d, True, 17)
    eps = np.random.default_rng(18).standard_normal((3, 4, d))
    cfg = ObjectiveConfig(K=4, mnar=True)
    rows = iwelbo_rows(y, X, R, eps, params, True)
    for i in range(3):
        mis = np.flatnonzero(R[i] == 0)
        v = iwelbo_row((y[i], X[i], R[i]), params.theta, params.psi, params.phi,
                       eps[i][:, mis], cfg)
        assert v == pytest.approx(rows[i], abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        ObjectiveConfig(K=0)
