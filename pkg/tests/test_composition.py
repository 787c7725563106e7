import numpy as np
import pytest

from fusion_bounds.composition import (
    ComponentEstimate,
    ComposedTarget,
    OlsLayout,
    compose_delta,
    difference_variance_bounds,
    joint_influence_covariance,
    ols_coefficient_bounds,
)
from fusion_bounds.dataset import FusedDataset
from fusion_bounds.estimands import Product, x_moment
from fusion_bounds.estimator import InferenceConfig, infer, infer_identifiable
from fusion_bounds.learners import FeatureMapLearner, RidgeMomentLearner
from fusion_bounds.nuisance import NuisanceConfig
from fusion_bounds.utils import LengthMismatchError, SingularCompositionError


_X1 = x_moment("e[x1]", lambda x: x[:, 0])


def _half(x):
    return np.full(x.shape[0], 0.5)


def _quadratic_config(seed: int = 0) -> InferenceConfig:
    learner = FeatureMapLearner(base=RidgeMomentLearner(lambda_grid=(1e-8,)))
    nuisance = NuisanceConfig(
        known_propensity=_half, moment_learner_y=learner, moment_learner_z=learner
    )
    return InferenceConfig(seed=seed, nuisance=nuisance)


def _ols_data(n: int, noise: float, seed: int) -> FusedDataset:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    z = x[:, 0] ** 2 + noise * rng.normal(size=n)
    y = 0.5 * x[:, 1] + z + noise * rng.normal(size=n)
    r = (rng.random(n) < 0.5).astype(int)
    return FusedDataset.from_arrays(x, r, y, z)


def test_single_component_covariance_matches_infer(linear_data):
    result = infer(linear_data, Product(), InferenceConfig())
    cov = joint_influence_covariance([result.influence_upper])
    assert cov.shape == (1, 1)
    assert cov[0, 0] == pytest.approx(result.v_u_hat, rel=1e-12)


def test_identical_components_are_perfectly_correlated():
    psi = np.random.default_rng(0).normal(size=100)
    cov = joint_influence_covariance([psi, psi])
    assert cov[0, 1] == pytest.approx(cov[0, 0])
    assert np.linalg.matrix_rank(cov) == 1


def test_independent_components_are_uncorrelated():
    rng = np.random.default_rng(1)
    n = 10_000
    cov = joint_influence_covariance([rng.normal(size=n), rng.normal(size=n)])
    rho = cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1])
    assert abs(rho) <= 3.0 / np.sqrt(n)


def test_covariance_needs_equal_lengths():
    with pytest.raises(LengthMismatchError):
        joint_influence_covariance([np.zeros(3), np.zeros(4)])
    with pytest.raises(LengthMismatchError):
        joint_influence_covariance([])


def test_identity_composition_reproduces_the_interval(linear_data):
    result = infer(linear_data, Product(), InferenceConfig())
    target = ComposedTarget(
        components=(
            ComponentEstimate.lower("l", result),
            ComponentEstimate.upper("u", result),
        ),
        s_lower=lambda theta: float(theta[0]),
        s_upper=lambda theta: float(theta[1]),
        grad_lower=lambda theta: np.array([1.0, 0.0]),
        grad_upper=lambda theta: np.array([0.0, 1.0]),
        grad_mode="analytic",
    )
    composed = compose_delta(target, result.alpha)
    for field in ("theta_l_hat", "theta_u_hat", "v_l_hat", "v_u_hat", "lcb", "ucb"):
        expected = getattr(result, field)
        assert getattr(composed, field) == pytest.approx(expected, abs=1e-10)


def test_linear_composition_variance(linear_data):
    config = InferenceConfig()
    cross = x_moment("e[x1 x2]", lambda x: x[:, 0] * x[:, 1])
    first = infer_identifiable(linear_data, _X1, config)
    second = infer_identifiable(linear_data, cross, config)
    components = (
        ComponentEstimate.lower("a", first),
        ComponentEstimate.lower("b", second),
    )
    a = np.array([2.0, -3.0])

    def linear(theta):
        return float(a @ theta)

    target = ComposedTarget(
        components, linear, linear, lambda _: a, lambda _: a, grad_mode="analytic"
    )
    analytic = compose_delta(target, 0.05)
    numeric = compose_delta(ComposedTarget(components, linear, linear), 0.05)
    cov = joint_influence_covariance([first.influence_lower, second.influence_lower])
    assert analytic.v_u_hat == pytest.approx(a @ cov @ a, rel=1e-12)
    assert numeric.v_u_hat == pytest.approx(analytic.v_u_hat, rel=1e-5)


def test_singular_second_moment_matrix():
    layout = OlsLayout(d=2)
    theta = np.array([1.0, 1.0, 1.0, 0.5, 0.0, 1.0])
    with pytest.raises(SingularCompositionError):
        layout.s_upper(theta)


def test_ols_gradients_match_finite_differences():
    layout = OlsLayout(d=3)
    a = np.array([[1.0, 0.2, 0.4], [0.2, 1.5, -0.3], [0.4, -0.3, 2.0]])
    theta = np.array([a[i, j] for i, j in layout.pairs] + [0.7, -0.2, 0.3, 0.9])
    pairs = ((layout.grad_lower, layout.s_lower), (layout.grad_upper, layout.s_upper))
    for analytic, fn in pairs:
        shifts = 1e-6 * np.eye(theta.size)
        numeric = np.array([(fn(theta + h) - fn(theta - h)) / 2e-6 for h in shifts])
        assert np.allclose(analytic(theta), numeric, atol=1e-6)


def test_ols_deterministic_design_recovers_the_coefficient():
    result = ols_coefficient_bounds(_ols_data(2000, 0.0, 3), _quadratic_config(3))
    assert result.theta_l_hat == pytest.approx(1.0, abs=0.1)
    assert result.theta_u_hat == pytest.approx(1.0, abs=0.1)
    assert result.theta_u_hat - result.theta_l_hat < 0.05
    assert "product" in result.diagnostics


def test_ols_gradient_modes_agree():
    data = _ols_data(1500, 0.5, 5)
    analytic = ols_coefficient_bounds(data, _quadratic_config(5), grad_mode="analytic")
    numeric = ols_coefficient_bounds(
        data, _quadratic_config(5), grad_mode="finite-difference"
    )
    scale = np.abs(np.array(analytic.diagnostics["grad_upper"])).max()
    for key in ("grad_upper", "grad_lower"):
        expected = numeric.diagnostics[key]
        assert np.allclose(analytic.diagnostics[key], expected, atol=1e-4 * scale)
    assert analytic.v_u_hat == pytest.approx(numeric.v_u_hat, rel=1e-4)


def test_ols_bounds_bracket_zero_without_signal():
    rng = np.random.default_rng(6)
    n = 1500
    x = rng.normal(size=(n, 1))
    y = x[:, 0] + rng.normal(size=n)
    z = rng.normal(size=n)
    r = (rng.random(n) < 0.5).astype(int)
    data = FusedDataset.from_arrays(x, r, y, z)
    result = ols_coefficient_bounds(data, InferenceConfig(seed=6))
    assert result.lcb < 0.0 < result.ucb
    assert result.theta_l_hat < 0.0 < result.theta_u_hat


def test_difference_variance_bounds():
    rng = np.random.default_rng(7)
    n = 3000
    x = rng.normal(size=(n, 1))
    y = x[:, 0] + 0.5 * rng.normal(size=n)
    z = x[:, 0] + 0.5 * rng.normal(size=n)
    r = (rng.random(n) < 0.5).astype(int)
    config = InferenceConfig(seed=7, nuisance=NuisanceConfig(known_propensity=_half))
    result = difference_variance_bounds(FusedDataset.from_arrays(x, r, y, z), config)
    # Var(Y - Z) ranges over [0, 4 * 0.25] as the coupling of the noises varies
    assert result.theta_l_hat == pytest.approx(0.0, abs=0.15)
    assert result.theta_u_hat == pytest.approx(1.0, abs=0.15)
    assert result.diagnostics["grad_mode"] == "analytic"


def test_kink_detection():
    layout = OlsLayout(d=3)
    # with A = I, A^-1 e_d = e_d has exact zeros
    identity = np.array([float(i == j) for i, j in layout.pairs] + [0.0, 0.0, 0.1, 0.4])
    assert layout.kinked(identity)
    a = np.array([[1.0, 0.2, 0.4], [0.2, 1.5, -0.3], [0.4, -0.3, 2.0]])
    generic = np.array([a[i, j] for i, j in layout.pairs] + [0.7, -0.2, 0.3, 0.9])
    assert not layout.kinked(generic)


def test_ols_bounds_flag_kinks(monkeypatch):
    monkeypatch.setattr(OlsLayout, "kinked", lambda self, theta: True)
    result = ols_coefficient_bounds(_ols_data(600, 0.5, 8), _quadratic_config(8))
    assert "KinkWarning" in result.flags


def test_crossed_bounds_are_flagged(linear_data):
    moment = infer_identifiable(linear_data, _X1, InferenceConfig())
    component = ComponentEstimate.lower("e[x1]", moment)
    target = ComposedTarget(
        components=(component,),
        s_lower=lambda theta: float(theta[0]) + 1.0,
        s_upper=lambda theta: float(theta[0]),
        grad_lower=lambda theta: np.ones(1),
        grad_upper=lambda theta: np.ones(1),
        grad_mode="analytic",
    )
    result = compose_delta(target, 0.05)
    assert result.theta_l_hat > result.theta_u_hat
    assert "CrossedBounds" in result.flags


@pytest.mark.slow
def test_ols_interval_coverage_on_a_deterministic_design():
    hits = 0
    for seed in range(200):
        data = _ols_data(1000, 0.0, 100 + seed)
        result = ols_coefficient_bounds(data, _quadratic_config(seed))
        hits += result.lcb <= 1.0 <= result.ucb
    assert hits / 200 >= 0.90
