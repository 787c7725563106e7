import numpy as np
import pytest

from fusion_bounds.learners import (
    FeatureMapLearner,
    KnownPropensity,
    LogNormalMomentLearner,
    RidgeMomentLearner,
    default_lambda_grid,
    fit_conditional_variance,
    fit_logistic_cv,
    fit_logistic_ridge,
    fit_ridge,
    fit_ridge_cv,
    quadratic_features,
)
from fusion_bounds.utils import (
    DegenerateDesignError,
    EmptyInputError,
    InputValidationError,
    NonFiniteTargetError,
    SingleClassError,
    SupportError,
)


def test_default_grid_scales_with_n_and_p():
    grid = default_lambda_grid(100, 2)
    assert len(grid) == 20
    assert grid[0] == pytest.approx(1e-4 * 200)
    assert grid[-1] == pytest.approx(1e4 * 200)


def test_ridge_cv_interpolates_noiseless_data():
    x = np.random.default_rng(0).normal(size=(50, 1))
    model = fit_ridge_cv(x, 2.0 * x[:, 0], [1e-8, 1.0, 10.0])
    assert model.lam == 1e-8
    assert model.coef[0] == pytest.approx(2.0, abs=1e-4)
    assert model.intercept == pytest.approx(0.0, abs=1e-4)


def test_ridge_on_constant_targets():
    x = np.random.default_rng(1).normal(size=(30, 3))
    model = fit_ridge_cv(x, np.full(30, 4.5), default_lambda_grid(30, 3))
    assert model.intercept == pytest.approx(4.5)
    assert np.allclose(model.coef, 0.0, atol=1e-12)


def test_ridge_matches_the_normal_equations():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 2))
    y = rng.normal(size=6)
    model = fit_ridge(x, y, 0.5)
    xs = (x - x.mean(axis=0)) / x.std(axis=0)
    expected = np.linalg.solve(xs.T @ xs + 0.5 * np.eye(2), xs.T @ (y - y.mean()))
    assert np.allclose(model.standardized_coef, expected, atol=1e-10)
    assert np.allclose(model.predict(x), y.mean() + xs @ expected, atol=1e-10)


def test_ridge_zero_variance_column_gets_zero_coefficient():
    rng = np.random.default_rng(3)
    x = np.column_stack([rng.normal(size=40), np.ones(40)])
    model = fit_ridge(x, x[:, 0], 1e-6)
    assert model.coef[1] == 0.0


def test_ridge_shrinks_monotonically_along_the_grid():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(80, 4))
    y = x @ np.array([1.0, -2.0, 0.5, 0.0]) + rng.normal(size=80)
    grid = (0.0, 1.0, 10.0, 1e3, 1e9)
    norms = [np.linalg.norm(fit_ridge(x, y, lam).standardized_coef) for lam in grid]
    assert all(a >= b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-5


def test_ridge_input_validation():
    with pytest.raises(DegenerateDesignError):
        fit_ridge(np.ones((1, 2)), [1.0], 1.0)
    with pytest.raises(DegenerateDesignError):
        fit_ridge(np.ones((3, 2)), [1.0, 2.0], 1.0)
    with pytest.raises(NonFiniteTargetError):
        fit_ridge(np.ones((2, 1)), [1.0, np.nan], 1.0)
    with pytest.raises(InputValidationError):
        fit_ridge_cv(np.ones((4, 1)), np.ones(4), [])
    with pytest.raises(InputValidationError):
        fit_ridge_cv(np.ones((4, 1)), np.ones(4), [-1.0])


def test_logistic_no_signal_balanced_labels():
    x = np.random.default_rng(5).normal(size=(200, 2))
    labels = np.tile([0.0, 1.0], 100)
    model = fit_logistic_ridge(x, labels, 1e3)
    assert model.intercept == pytest.approx(0.0, abs=0.05)
    assert np.allclose(model.predict(x), 0.5, atol=0.05)


def test_logistic_separable_data_stays_finite():
    x = np.linspace(-1.0, 1.0, 20)[:, None]
    labels = (x[:, 0] > 0).astype(float)
    model = fit_logistic_ridge(x, labels, 1.0)
    assert np.all(np.isfinite(model.coef))
    assert model.gradient_norm <= 1e-6


def test_logistic_intercept_only_mle():
    rng = np.random.default_rng(6)
    labels = (rng.random(500) < 0.8).astype(float)
    model = fit_logistic_ridge(np.zeros((500, 1)), labels, 0.0)
    mean = labels.mean()
    assert model.intercept == pytest.approx(np.log(mean / (1 - mean)), abs=1e-3)


def test_logistic_single_class():
    with pytest.raises(SingleClassError):
        fit_logistic_ridge(np.ones((4, 1)), np.ones(4), 1.0)


def test_logistic_cv_recovers_the_slope_direction():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(400, 2))
    labels = (rng.random(400) < 1.0 / (1.0 + np.exp(-(1.5 * x[:, 0])))).astype(float)
    model = fit_logistic_cv(x, labels, default_lambda_grid(400, 2), seed=3)
    assert model.coef[0] > 0.5
    assert abs(model.coef[1]) < 0.5
    assert model.cv_loss is not None


def test_homoskedastic_variance_is_the_mean():
    model = fit_conditional_variance(np.zeros((2, 1)), [1.0, 3.0], "homoskedastic")
    assert model.predict(np.zeros((5, 1))).tolist() == [2.0] * 5


def test_regression_variance_tracks_a_linear_signal():
    x = np.linspace(1.0, 2.0, 40)[:, None]
    model = fit_conditional_variance(
        x, 2.0 * x[:, 0], "regression", lambda_grid=[1e-10], floor=1e-3
    )
    values, floored = model.predict_with_flags(x)
    assert np.allclose(values, 2.0 * x[:, 0], atol=1e-6)
    assert not floored.any()


def test_regression_variance_is_floored():
    x = np.linspace(0.0, 1.0, 40)[:, None]
    model = fit_conditional_variance(
        x, 1.0 - x[:, 0] * 0.99, "regression", lambda_grid=[1e-10], floor=0.05
    )
    values, floored = model.predict_with_flags(np.array([[1.3]]))
    assert values[0] == 0.05
    assert floored[0]


def test_variance_needs_residuals():
    with pytest.raises(EmptyInputError):
        fit_conditional_variance(np.zeros((0, 1)), [], "homoskedastic")


def test_ridge_moment_learner_on_deterministic_targets():
    x = np.random.default_rng(8).normal(size=(60, 2))
    fit = RidgeMomentLearner(lambda_grid=(1e-10,)).fit(x, x[:, 0], seed=0)
    assert np.allclose(fit.mean(x), x[:, 0], atol=1e-6)
    assert np.all(fit.variance(x) < 1e-10)


def test_lognormal_learner_recovers_the_moments():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4000, 1))
    targets = np.exp(0.5 * x[:, 0] + 0.3 * rng.normal(size=4000))
    fit = LogNormalMomentLearner(lambda_grid=(1e-6,)).fit(x, targets, seed=0)
    points = np.array([[0.0], [1.0]])
    expected_mean = np.exp(0.5 * points[:, 0] + 0.045)
    assert np.allclose(fit.mean(points), expected_mean, rtol=0.03)
    expected_var = np.exp(points[:, 0] + 0.09) * np.expm1(0.09)
    assert np.allclose(fit.variance(points), expected_var, rtol=0.1)


def test_lognormal_learner_needs_one_sign():
    with pytest.raises(SupportError):
        LogNormalMomentLearner().fit(
            np.zeros((3, 1)), np.array([1.0, -1.0, 2.0]), seed=0
        )


def test_quadratic_features():
    out = quadratic_features(np.array([[1.0, 2.0]]))
    assert out.tolist() == [[1.0, 2.0, 1.0, 2.0, 4.0]]


def test_feature_map_learner_fits_a_quadratic_mean():
    x = np.random.default_rng(10).normal(size=(200, 1))
    learner = FeatureMapLearner(base=RidgeMomentLearner(lambda_grid=(1e-10,)))
    fit = learner.fit(x, x[:, 0] ** 2, seed=0)
    assert np.allclose(fit.mean(np.array([[2.0]])), [4.0], atol=1e-6)


def test_known_propensity():
    fit = KnownPropensity.constant(0.3).fit(np.zeros((4, 2)), np.zeros(4), seed=0)
    assert fit.predict(np.zeros((4, 2))).tolist() == [0.3] * 4
    with pytest.raises(InputValidationError):
        KnownPropensity.constant(1.0)
