import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.special import softmax

from oracles import central_diff, mtlr_nll_loop, mtlr_scores_delta, rel_err
from survmtlr.core import EncodedTargets, Scaler, SurvivalDataset, TimeGrid, encode_targets
from survmtlr.mtlr import (MtlrModel, MtlrParameters, density_from_logits, gradient,
                           interval_scores, mtlr_fit, mtlr_risk, neg_log_likelihood,
                           predict_density, predict_survival, scores_from_logits)


def random_params(rng, p, K, scale=1.0):
    return MtlrParameters(rng.normal(size=(p, K)) * scale, rng.normal(size=K) * scale)


def random_targets(rng, n, K):
    return EncodedTargets(rng.integers(1, K + 2, size=n), rng.random(n) < 0.6)


def identity_model(theta, bias, boundaries):
    p = np.asarray(theta).shape[0]
    return MtlrModel(MtlrParameters(theta, bias), TimeGrid(boundaries),
                     Scaler(np.zeros(p), np.ones(p)))


# -- scores and density -----------------------------------------------------

def test_zero_params_scores():
    np.testing.assert_array_equal(interval_scores(MtlrParameters.zeros(3, 4), np.ones(3)), 0)


def test_scores_unrolled():
    a, c = 0.7, -1.3
    params = MtlrParameters([[a, c]], [0.0, 0.0])
    np.testing.assert_allclose(interval_scores(params, np.array([1.0])), [a + c, c, 0])


def test_scores_match_delta_matrix(rng):
    for K in range(1, 7):
        for _ in range(10):
            params = random_params(rng, 3, K)
            x = rng.normal(size=3)
            np.testing.assert_allclose(interval_scores(params, x),
                                       mtlr_scores_delta(params.theta, params.bias, x),
                                       rtol=1e-12, atol=1e-12)


def test_uniform_density():
    d = predict_density(MtlrParameters.zeros(2, 3), np.zeros(2))
    np.testing.assert_allclose(d, [0.25] * 4)


def test_hand_softmax():
    d = density_from_logits(np.array([[math.log(2.0)]]))[0]
    np.testing.assert_allclose(d, [2 / 3, 1 / 3], rtol=1e-14)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                  elements=st.floats(-30, 30)),
       st.floats(-50, 50))
def test_density_properties(u, c):
    d = density_from_logits(u)
    assert np.all(d >= 0)
    np.testing.assert_allclose(d.sum(axis=1), 1.0, atol=1e-12)
    # shifting every score by c leaves the softmax unchanged
    shifted = softmax(scores_from_logits(u) + c, axis=1)
    np.testing.assert_allclose(shifted, d, atol=1e-12)


# -- survival ---------------------------------------------------------------

def test_uniform_survival_curve():
    model = identity_model(np.zeros((1, 3)), np.zeros(3), [1.0, 2.0, 3.0])
    curve = predict_survival(model, [0.0])
    np.testing.assert_allclose(curve([0, 1, 2, 3, 10]), [1, 0.75, 0.5, 0.25, 0.25])
    np.testing.assert_allclose(curve([0.5, 1.5, 2.99]), [1, 0.75, 0.5])


def test_boundary_survival_equals_tail_sum(rng):
    for _ in range(20):
        K = int(rng.integers(1, 6))
        model = identity_model(rng.normal(size=(2, K)), rng.normal(size=K),
                               np.cumsum(rng.uniform(0.5, 2, size=K)))
        x = rng.normal(size=2)
        f = model.predict_density(x)[0]
        S = model.predict_survival_matrix(x, model.grid.boundaries)[0]
        for s in range(K):
            assert S[s] == pytest.approx(1.0 - sum(f[:s + 1]), abs=1e-12)
            assert S[s] == pytest.approx(sum(f[s + 1:]), abs=1e-15)
        curve = predict_survival(model, x)
        assert curve(0) == 1.0 and np.all(np.diff(curve.values) <= 0)


# -- likelihood -------------------------------------------------------------

@pytest.mark.parametrize("J", [2, 3, 5])
@pytest.mark.parametrize("s", [1, 2])
def test_zero_param_event_nll(J, s):
    enc = EncodedTargets([s], [True])
    assert neg_log_likelihood(MtlrParameters.zeros(1, J - 1), enc, [[0.3]]) == pytest.approx(
        math.log(J), rel=1e-14)


def test_zero_param_censored_nll():
    for s in range(1, 5):
        enc = EncodedTargets([s], [False])
        nll = neg_log_likelihood(MtlrParameters.zeros(1, 3), enc, [[1.0]])
        assert nll == pytest.approx(-math.log((4 - s + 1) / 4), abs=1e-14)
    enc = EncodedTargets([2], [False])
    assert neg_log_likelihood(MtlrParameters.zeros(1, 3), enc, [[1.0]]) == pytest.approx(
        -math.log(0.75))


def test_reg_term_is_additive(rng):
    params = random_params(rng, 3, 4)
    enc = random_targets(rng, 10, 4)
    X = rng.normal(size=(10, 3))
    diff = neg_log_likelihood(params, enc, X, 0.37) - neg_log_likelihood(params, enc, X, 0.0)
    assert diff == pytest.approx(0.37 / 2 * np.sum(params.theta ** 2), rel=1e-12)


def test_nll_matches_loop_oracle(rng):
    for _ in range(10):
        K = int(rng.integers(1, 6))
        params = random_params(rng, 2, K)
        enc = random_targets(rng, 12, K)
        X = rng.normal(size=(12, 2))
        u = params.logits(X)
        expect = mtlr_nll_loop(u, enc.interval_index, enc.is_event)
        assert neg_log_likelihood(params, enc, X) == pytest.approx(expect, rel=1e-12)


def test_gradient_hand_example():
    enc = EncodedTargets([1], [True])
    g = gradient(MtlrParameters.zeros(1, 2), enc, [[0.0]])
    np.testing.assert_allclose(g.bias, [-2 / 3, -1 / 3], rtol=1e-14)


def test_gradient_zero_at_single_sample_optimum():
    # events split evenly over two intervals: optimum at zero
    enc = EncodedTargets([1, 2], [True, True])
    params = MtlrParameters([[0.0]], [0.0])
    g = gradient(params, enc, [[0.0], [0.0]])
    np.testing.assert_allclose(g.flat(), 0.0, atol=1e-15)
    # censored in interval 1 carries no information, so every point is optimal
    enc = EncodedTargets([1], [False])
    g = gradient(MtlrParameters([[0.4]], [-1.2]), enc, [[1.0]])
    np.testing.assert_allclose(g.flat(), 0.0, atol=1e-15)


def test_gradient_finite_differences(rng):
    for _ in range(20):
        p, K, n = int(rng.integers(1, 4)), int(rng.integers(1, 6)), 8
        params = random_params(rng, p, K, 0.7)
        enc = random_targets(rng, n, K)
        X = rng.normal(size=(n, p))
        reg = float(rng.uniform(0, 0.5))
        g = gradient(params, enc, X, reg).flat()
        fd = central_diff(
            lambda v: neg_log_likelihood(MtlrParameters.from_flat(v, p, K), enc, X, reg),
            params.flat())
        assert rel_err(g, fd) < 1e-6


def test_nll_convex_along_random_segments(rng):
    for _ in range(50):
        K = int(rng.integers(1, 5))
        p1, p2 = random_params(rng, 2, K, 2.0), random_params(rng, 2, K, 2.0)
        enc = random_targets(rng, 15, K)
        X = rng.normal(size=(15, 2))
        lam = float(rng.random())
        mid = MtlrParameters.from_flat(lam * p1.flat() + (1 - lam) * p2.flat(), 2, K)
        lhs = lam * neg_log_likelihood(p1, enc, X, 0.1) + (1 - lam) * neg_log_likelihood(
            p2, enc, X, 0.1)
        assert lhs >= neg_log_likelihood(mid, enc, X, 0.1) - 1e-10


# -- fitting ----------------------------------------------------------------

def separable_toy():
    # A dies in interval 1, B in interval 2; opposite features
    return SurvivalDataset([[1.0], [-1.0]], [0.5, 2.0], [1, 1]), TimeGrid([1.0])


def test_separable_toy_fit():
    data, grid = separable_toy()
    n_iter = 800
    path = []
    for k in range(n_iter - 50, n_iter + 1):
        m = mtlr_fit(data, grid, reg_strength=0.0, max_iter=k, tol=0.0)
        path.append(m.final_loss)
    assert all(b < a for a, b in zip(path, path[1:]))
    f = m.predict_density(data.features)
    assert f[0, 0] > 0.9 and f[1, 1] > 0.9


@pytest.mark.parametrize("optimizer", ["adam", "lbfgs"])
def test_heavy_regularization_gives_intercept_model(rng, optimizer):
    n = 200
    X = rng.normal(size=(n, 2))
    times = np.where(rng.random(n) < 0.3, 0.5, 2.0)
    data = SurvivalDataset(X, times, np.ones(n))
    q = float(np.mean(times < 1.0))
    m = mtlr_fit(data, TimeGrid([1.0]), reg_strength=1e6, optimizer=optimizer, max_iter=3000)
    assert np.max(np.abs(m.params.theta)) < 1e-4
    b = m.params.bias[0]
    assert math.exp(b) / (math.exp(b) + 1) == pytest.approx(q, abs=1e-3)


def test_fit_deterministic(rng):
    X = rng.normal(size=(60, 3))
    t = rng.exponential(np.exp(X[:, 0]))
    data = SurvivalDataset(X, t, rng.random(60) < 0.7)
    grid = TimeGrid(np.quantile(t, [0.25, 0.5, 0.75]))
    a = mtlr_fit(data, grid, seed=3, max_iter=300)
    b = mtlr_fit(data, grid, seed=3, max_iter=300)
    np.testing.assert_array_equal(a.params.theta, b.params.theta)
    np.testing.assert_array_equal(a.params.bias, b.params.bias)


def test_adam_and_lbfgs_agree(rng):
    X = rng.normal(size=(120, 2))
    t = rng.exponential(np.exp(-X[:, 0]))
    data = SurvivalDataset(X, t, rng.random(120) < 0.8)
    grid = TimeGrid(np.quantile(t, [0.2, 0.4, 0.6, 0.8]))
    a = mtlr_fit(data, grid, max_iter=5000, tol=1e-10)
    b = mtlr_fit(data, grid, optimizer="lbfgs")
    assert a.final_loss == pytest.approx(b.final_loss, abs=1e-5)


def test_nonfinite_loss_reports_iteration():
    data, grid = separable_toy()
    from survmtlr.mtlr import FitError
    with pytest.raises(FitError, match="iteration"), np.errstate(over="ignore"):
        mtlr_fit(data, grid, optimizer="sgd", learning_rate=1e308, reg_strength=1.0)


def test_model_roundtrip(rng):
    data, grid = separable_toy()
    m = mtlr_fit(data, grid, max_iter=50)
    back = MtlrModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.predict_density(data.features),
                                  m.predict_density(data.features))


# -- risk -------------------------------------------------------------------

def test_risk_extremes():
    K = 3
    # scores (50, 0, 0, 0) and (-150, -100, -50, 0)
    early = identity_model(np.zeros((1, K)), [50.0, 0.0, 0.0], [1.0, 2.0, 3.0])
    late = identity_model(np.zeros((1, K)), [-50.0, -50.0, -50.0], [1.0, 2.0, 3.0])
    assert mtlr_risk(early, [0.0]) == pytest.approx(0.0, abs=1e-12)
    assert mtlr_risk(late, [0.0]) == pytest.approx(-K, abs=1e-12)
    assert isinstance(mtlr_risk(early, [0.0]), float)


def test_risk_ranks_like_expected_interval(rng):
    for _ in range(100):
        K = int(rng.integers(1, 5))
        model = identity_model(rng.normal(size=(2, K)), rng.normal(size=K),
                               np.arange(1.0, K + 1))
        X = rng.normal(size=(6, 2))
        f = model.predict_density(X)
        expected_index = f @ np.arange(1, K + 2)
        risk = mtlr_risk(model, X)
        np.testing.assert_allclose(risk, 1.0 - expected_index, atol=1e-12)
        order = np.argsort(-expected_index, kind="stable")
        assert np.all(np.diff(risk[order]) >= -1e-12)


def test_encode_then_nll_uses_tail_for_censored():
    grid = TimeGrid([1.0, 2.0])
    enc = encode_targets([1.5], grid, [False])
    params = MtlrParameters([[0.0, 0.0]], [0.3, -0.2])
    f = density_from_logits(params.bias[None, :])[0]
    assert neg_log_likelihood(params, enc, [[0.0]]) == pytest.approx(-math.log(f[1] + f[2]))
