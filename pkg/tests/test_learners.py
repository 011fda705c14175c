import numpy as np
import pytest

from pdxitr import (
    DecisionFunction,
    ForestParams,
    LearnerError,
    LinearModel,
    fit_lasso,
    fit_random_forest,
    fit_weighted_classifier,
    lasso_lambda_max,
    median_bandwidth,
    smooth_outcomes,
    weighted_hinge_objective,
)

from conftest import make_dataset


# ---------------------------------------------------------------------------
# Lasso


def test_lasso_soft_threshold_single_predictor():
    # standardized predictor with X'y/n = 0.5, lam = 0.2 -> beta = 0.3
    n = 8
    x = np.tile([1.0, -1.0], n // 2)  # mean 0, rms 1
    y = 0.5 * x
    model = fit_lasso(x[:, None], y, 0.2)
    assert model.coefficients[0] == pytest.approx(0.3, abs=1e-8)
    assert model.intercept == pytest.approx(0.0, abs=1e-8)


def test_lasso_full_shrinkage_at_lambda_max(rng):
    X = rng.standard_normal((40, 5))
    y = X @ np.array([1.0, 0.0, -2.0, 0.5, 0.0]) + rng.standard_normal(40)
    lam_max = lasso_lambda_max(X, y)
    model = fit_lasso(X, y, lam_max)
    assert np.allclose(model.coefficients, 0.0, atol=1e-10)
    assert model.intercept == pytest.approx(y.mean())


def test_lasso_zero_penalty_matches_least_squares(rng):
    X = rng.standard_normal((50, 4))
    y = X @ np.array([1.0, -2.0, 0.0, 0.5]) + 3.0 + 0.1 * rng.standard_normal(50)
    model = fit_lasso(X, y, 0.0)
    Xd = np.column_stack([np.ones(50), X])
    beta = np.linalg.lstsq(Xd, y, rcond=None)[0]
    assert model.intercept == pytest.approx(beta[0], abs=1e-6)
    assert np.allclose(model.coefficients, beta[1:], atol=1e-6)


def test_lasso_objective_non_increasing(rng):
    for _ in range(50):
        n = int(rng.integers(5, 30))
        p = int(rng.integers(1, 8))
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        lam = float(rng.uniform(0, 0.5))
        model = fit_lasso(X, y, lam)
        path = model.objective_path
        assert all(a >= b - 1e-12 for a, b in zip(path, path[1:]))


def test_lasso_input_guards():
    with pytest.raises(LearnerError):
        fit_lasso(np.zeros((3, 2)), np.zeros(2), 0.1)
    with pytest.raises(LearnerError):
        fit_lasso(np.zeros((3, 2)), np.array([1.0, np.nan, 0.0]), 0.1)
    with pytest.raises(LearnerError):
        fit_lasso(np.zeros((3, 2)), np.zeros(3), -0.1)


def test_linear_model_constant_when_all_zero():
    model = LinearModel(2.5, np.zeros(3), 0.0)
    assert np.allclose(model.predict(np.random.randn(4, 3)), 2.5)
    with pytest.raises(LearnerError):
        model.predict(np.zeros((1, 2)))


# ---------------------------------------------------------------------------
# Random forest


def test_forest_depth_zero_is_constant(rng):
    X = rng.standard_normal((20, 2))
    y = rng.standard_normal(20)
    forest = fit_random_forest(X, y, ForestParams(n_trees=10, max_depth=0), seed=0)
    assert np.allclose(forest.predict(X), y.mean())


def test_forest_learns_step_function(rng):
    X = rng.uniform(-1, 1, (200, 1))
    y = (X[:, 0] > 0).astype(float)
    forest = fit_random_forest(X, y, ForestParams(n_trees=100, min_leaf=1), seed=0)
    Xt = rng.uniform(-1, 1, (100, 1))
    yt = (Xt[:, 0] > 0).astype(float)
    assert np.mean((forest.predict(Xt) - yt) ** 2) < 0.05


def test_forest_deterministic_given_seed(rng):
    X = rng.standard_normal((30, 3))
    y = rng.standard_normal(30)
    f1 = fit_random_forest(X, y, ForestParams(n_trees=20), seed=7)
    f2 = fit_random_forest(X, y, ForestParams(n_trees=20), seed=7)
    assert np.array_equal(f1.predict(X), f2.predict(X))


def test_forest_guards():
    with pytest.raises(LearnerError):
        fit_random_forest(np.zeros((1, 1)), np.zeros(1), ForestParams(), 0)
    with pytest.raises(LearnerError):
        fit_random_forest(np.zeros((3, 1)), np.zeros(3), ForestParams(min_leaf=4), 0)


# ---------------------------------------------------------------------------
# Weighted hinge classifiers


def test_hinge_separable_four_points_linear_and_gaussian():
    X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    labels = np.array([1.0, 1.0, -1.0, -1.0])
    rewards = np.ones(4)
    for form in ("linear", "gaussian"):
        dfn = fit_weighted_classifier(X, labels, rewards, form=form, lam=1e-8)
        assert np.array_equal(dfn.predict(X), labels)
        hinge = weighted_hinge_objective(dfn.decision_values(X), labels, rewards, 0.0)
        assert hinge < 0.5


def test_hinge_objective_monotone(rng):
    for _ in range(20):
        n = int(rng.integers(4, 20))
        p = int(rng.integers(1, 4))
        X = rng.standard_normal((n, p))
        labels = rng.choice([-1.0, 1.0], n)
        rewards = rng.standard_normal(n)
        if np.all(rewards == 0):
            continue
        form = "linear" if rng.random() < 0.5 else "gaussian"
        dfn = fit_weighted_classifier(X, labels, rewards, form=form, lam=1e-2)
        path = dfn.objective_path
        assert all(a >= b - 1e-10 for a, b in zip(path, path[1:]))


def test_hinge_one_class_constant_positive(rng):
    X = rng.standard_normal((10, 2))
    dfn = fit_weighted_classifier(X, np.ones(10), np.ones(10), lam=1e-6)
    assert np.all(dfn.predict(X) == 1)


def test_hinge_negative_reward_flips_label():
    """A point with R < 0 and label +1 acts like label -1 with weight |R|."""
    f = np.array([0.5, -0.5])
    obj_flipped = weighted_hinge_objective(f, np.array([1.0, 1.0]), np.array([1.0, -2.0]), 0.0)
    obj_direct = weighted_hinge_objective(f, np.array([1.0, -1.0]), np.array([1.0, 2.0]), 0.0)
    assert obj_flipped == pytest.approx(obj_direct)


def test_hinge_tie_sign_is_positive():
    dfn = DecisionFunction("linear", 0.0, 0.0, weights=np.zeros(2))
    assert np.all(dfn.predict(np.zeros((3, 2))) == 1)


def test_hinge_kernel_support_point_matches_label(rng):
    X = np.array([[2.0], [-2.0], [2.1], [-2.1]])
    labels = np.array([1.0, -1.0, 1.0, -1.0])
    dfn = fit_weighted_classifier(X, labels, np.ones(4), form="gaussian", lam=1e-8)
    assert dfn.predict(X[:1])[0] == 1


def test_hinge_guards():
    X = np.zeros((3, 1))
    with pytest.raises(LearnerError):
        fit_weighted_classifier(X, np.array([1.0, 2.0, -1.0]), np.ones(3))
    with pytest.raises(LearnerError):
        fit_weighted_classifier(X, np.array([1.0, 1.0, -1.0]), np.zeros(3))


def test_median_bandwidth_positive(rng):
    X = rng.standard_normal((10, 2))
    assert median_bandwidth(X) > 0
    assert median_bandwidth(np.zeros((5, 2))) == 1.0


# ---------------------------------------------------------------------------
# Smoothing


def test_smoothing_constant_outcomes_fixed_point():
    ds = make_dataset(np.full((3, 6), 4.0))
    out = smooth_outcomes(ds, seed=0)
    assert all(r.response == pytest.approx(4.0) for r in out.records)
    assert np.array_equal(out.applied, ds.applied)


def test_smoothing_reduces_noise(rng):
    m = 80
    X = rng.standard_normal((m, 2))
    truth = np.vstack([np.sin(2 * X[:, 0]), np.cos(2 * X[:, 1]), np.zeros(m)])
    Y = truth + 0.5 * rng.standard_normal((3, m))
    ds = make_dataset(Y, X=X)
    out = smooth_outcomes(ds, seed=0)
    raw_mse = smoothed_mse = 0.0
    index = {l: j for j, l in enumerate(ds.line_ids)}
    trt = {t: i for i, t in enumerate(ds.treatments)}
    for r_raw, r_sm in zip(ds.records, out.records):
        mu = truth[trt[r_raw.treatment], index[r_raw.line_id]]
        raw_mse += (r_raw.response - mu) ** 2
        smoothed_mse += (r_sm.response - mu) ** 2
    assert smoothed_mse < raw_mse
