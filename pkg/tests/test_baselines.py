import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from avlr.baselines import (ConvergenceError, SaemConfig, fit_mean_imputation, logistic_newton,
                            mean_impute, mh_impute, mh_impute_row, predict_mean_imputation,
                            saem_fit, saem_predict, step_size)
from avlr.dataset import DataError, Dataset
from avlr.model import ModelParams
from oracles import posterior_moments_1d


def logistic_data(n=1500, seed=0, beta=(0.3, 1.0, -0.7)):
    rng = np.random.default_rng(seed)
    X = rng.multivariate_normal([0, 0], [[1, 0.5], [0.5, 1]], size=n)
    y = (rng.random(n) < expit(beta[0] + X @ np.array(beta[1:]))).astype(int)
    return X, y


# --- mean imputation ------------------------------------------------------

def test_mean_impute_examples():
    ds = Dataset(np.array([[1.0, 4.0], [np.nan, 5.0], [3.0, 6.0]]),
                 np.array([[1, 1], [0, 1], [1, 1]]), [0, 1, 0])
    out = mean_impute(ds)
    np.testing.assert_array_equal(out[:, 0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(out[:, 1], [4.0, 5.0, 6.0])


def test_mean_impute_preserves_observed_mean():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 3))
    R = (rng.random((40, 3)) > 0.4).astype(int)
    R[0] = 1
    out = mean_impute(Dataset(X, R, rng.integers(0, 2, 40)))
    for j in range(3):
        obs = R[:, j] == 1
        assert out[:, j].mean() == pytest.approx(X[obs, j].mean(), abs=1e-14)


def test_mean_impute_fully_missing_column():
    with pytest.raises(DataError):
        mean_impute(Dataset(np.ones((2, 2)), np.array([[1, 0], [1, 0]]), [0, 1]))


def test_mean_imputation_pipeline():
    X, y = logistic_data(500)
    R = np.ones_like(X, dtype=int)
    R[::3, 1] = 0
    ds = Dataset(X, R, y)
    fitted = fit_mean_imputation(ds)
    p = predict_mean_imputation(fitted, ds)
    assert p.shape == (500,) and np.all((p > 0) & (p < 1))


# --- logistic Newton ------------------------------------------------------

def test_newton_score_equations_hold():
    X, y = logistic_data()
    b = logistic_newton(X, y)
    Xt = np.column_stack([np.ones(len(y)), X])
    score = Xt.T @ (y - expit(Xt @ b))
    assert np.max(np.abs(score)) < 1e-7


def test_newton_weighted_equals_replicated():
    X, y = logistic_data(300, seed=2)
    w = np.where(np.arange(300) % 2 == 0, 2.0, 1.0)
    rep = np.concatenate([np.arange(300), np.arange(0, 300, 2)])
    np.testing.assert_allclose(logistic_newton(X, y, weights=w),
                               logistic_newton(X[rep], y[rep]), atol=1e-8)


def test_newton_separable_data_fails_loudly():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    with pytest.raises(ConvergenceError):
        logistic_newton(X, np.array([0, 0, 1, 1]), max_iter=20)


# --- Metropolis-Hastings ---------------------------------------------------

def test_zero_beta_mh_is_conditional_prior():
    n = 100_000
    mu, sd = 0.4, 1.3
    rng = np.random.default_rng(3)
    X0 = np.full((n, 1), mu)
    out = mh_impute(X0, np.zeros((n, 1), dtype=np.int8), rng.integers(0, 2, n),
                    np.zeros(2), np.array([mu]), np.array([[sd * sd]]), 1, rng)
    assert stats.kstest(out[:, 0], stats.norm(mu, sd).cdf).statistic < 0.02


def test_mh_1d_posterior_mean_matches_quadrature():
    n = 100_000
    b0, b1, mu, sd = 0.2, 2.0, -0.3, 1.0
    rng = np.random.default_rng(4)
    for y in (0, 1):
        out = mh_impute(np.full((n, 1), mu), np.zeros((n, 1), dtype=np.int8), np.full(n, y),
                        np.array([b0, b1]), np.array([mu]), np.array([[sd * sd]]), 30, rng)
        ref, _ = posterior_moments_1d(y, b0, b1, mu, sd)
        assert out.mean() == pytest.approx(ref, abs=0.02)


def test_mh_leaves_observed_cells():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(50, 3))
    R = rng.integers(0, 2, (50, 3)).astype(np.int8)
    out = mh_impute(X, R, rng.integers(0, 2, 50), rng.normal(size=4), np.zeros(3),
                    np.eye(3), 3, rng)
    np.testing.assert_array_equal(out[R == 1], X[R == 1])


def test_mh_impute_row():
    theta = ModelParams.from_moments([0.0, 1.0, 1.0], [0.0, 0.0], np.eye(2))
    v = mh_impute_row(np.array([0.5, 0.0]), np.array([1, 0]), 1, theta, SaemConfig(seed=1))
    assert v.shape == (1,)
    with pytest.raises(ValueError):
        mh_impute_row(np.zeros(2), np.ones(2), 1, theta, SaemConfig())


# --- SAEM -----------------------------------------------------------------

def test_step_size_schedule():
    assert [step_size(t, 3, 0.7) for t in (1, 2, 3)] == [1.0, 1.0, 1.0]
    assert step_size(4, 3, 0.7) == 1.0
    assert step_size(5, 3, 0.7) == pytest.approx(2 ** -0.7)


def test_config_validation():
    with pytest.raises(ValueError):
        SaemConfig(step_exponent=0.5)
    with pytest.raises(ValueError):
        SaemConfig(burn_in=120, max_iters=120)


def test_complete_data_reduces_to_newton_and_moments():
    X, y = logistic_data(800, seed=6)
    res = saem_fit(Dataset.from_complete(X, y), SaemConfig())
    assert res.n_iter == 1 and res.converged
    np.testing.assert_allclose(res.theta.beta, logistic_newton(X, y), atol=1e-6)
    np.testing.assert_allclose(res.theta.mu, X.mean(axis=0), atol=1e-12)
    ref = np.cov(X, rowvar=False, bias=True) + 1e-6 * np.eye(2)
    np.testing.assert_allclose(res.theta.cov, ref, atol=1e-10)


def incomplete_ds(n=2000, seed=0, rate=0.5):
    X, y = logistic_data(n, seed)
    rng = np.random.default_rng(seed + 100)
    R = (rng.random(X.shape) > rate).astype(int)
    return Dataset(X, R, y, X_true=X)


def test_unit_step_reproduces_monte_carlo_em():
    ds = incomplete_ds(300, seed=7)
    res = saem_fit(ds, SaemConfig(max_iters=4, burn_in=3, seed=2))
    st = res.state
    assert all(e["gamma"] == 1.0 for e in res.trace)
    np.testing.assert_allclose(st.S1, st.X.sum(axis=0), atol=1e-10)
    np.testing.assert_allclose(st.S2, st.X.T @ st.X, atol=1e-9)
    np.testing.assert_allclose(st.X_bar, st.X, atol=1e-12)
    np.testing.assert_allclose(st.beta, logistic_newton(st.X, ds.y), atol=1e-8)


def test_trace_bounded_and_sigma_spd():
    ds = incomplete_ds(1000, seed=8)
    res = saem_fit(ds, SaemConfig(max_iters=40, burn_in=10, seed=3, tol=0.0))
    assert res.n_iter == 40 and not res.converged
    assert np.linalg.eigvalsh(res.state.Sigma).min() > 0
    res = saem_fit(ds, SaemConfig(seed=3))
    assert res.n_iter <= 120


def test_saem_deterministic():
    ds = incomplete_ds(400, seed=9)
    a = saem_fit(ds, SaemConfig(max_iters=25, seed=4))
    b = saem_fit(ds, SaemConfig(max_iters=25, seed=4))
    np.testing.assert_array_equal(a.theta.beta, b.theta.beta)


def test_saem_recovers_beta_and_predicts():
    ds = incomplete_ds(2000, seed=10)
    res = saem_fit(ds, SaemConfig(seed=5))
    assert np.sqrt(np.mean((res.theta.beta - [0.3, 1.0, -0.7]) ** 2)) < 0.2
    p = saem_predict(res, ds, n_draws=50, seed=1)
    full = ds.R.all(axis=1)
    np.testing.assert_allclose(
        p[full], expit(res.theta.beta[0] + ds.X[full] @ res.theta.beta[1:]), atol=1e-12)


def test_saem_and_avlr_beta_errors_same_order():
    from avlr.trainer import TrainConfig, fit
    truth = np.array([0.3, 1.0, -0.7])
    e_saem, e_avlr = [], []
    for s in range(3):
        ds = incomplete_ds(2000, seed=20 + s)
        e_saem.append(np.linalg.norm(saem_fit(ds, SaemConfig(seed=s)).theta.beta - truth))
        e_avlr.append(np.linalg.norm(fit(ds, TrainConfig(seed=s)).theta.beta - truth))
    ratio = np.mean(e_saem) / np.mean(e_avlr)
    assert 0.5 <= ratio <= 2.0
