import numpy as np
import pytest

from fusion_bounds.dataset import FusedDataset
from fusion_bounds.dgp import ValidationStudy, sample_dgp
from fusion_bounds.estimands import Product
from fusion_bounds.folds import kfold_split
from fusion_bounds.nuisance import (
    LearnerConfig,
    MomentEstimates,
    NuisanceConfig,
    arm_values,
    cross_fit_propensity,
    estimate_nuisances,
    pooled_variance_floor,
    positivity_report,
)
from fusion_bounds.utils import (
    EmptyArmError,
    InputValidationError,
    ScalarEstimandRequiredError,
)


def _moments(e, n=1000, v=1.0):
    return MomentEstimates.from_values(
        np.zeros(n), np.zeros(n), np.full(n, v), np.full(n, v), e, e_floor=0.05
    )


def test_config_validation():
    with pytest.raises(InputValidationError):
        LearnerConfig(cv_folds=1)
    with pytest.raises(InputValidationError):
        LearnerConfig(variance_mode="quantile")  # type: ignore[arg-type]
    with pytest.raises(InputValidationError):
        NuisanceConfig(propensity_clip=0.6)
    assert NuisanceConfig().e_floor == 1e-12
    assert NuisanceConfig(propensity_clip=0.05).e_floor == 0.05


def test_from_values_applies_the_floors():
    moments = MomentEstimates.from_values(
        [1.0, 2.0],
        [3.0, 4.0],
        [-0.1, 2.0],
        [0.5, 0.0],
        [0.01, 0.995],
        variance_floor=0.2,
        e_floor=0.02,
    )
    assert moments.v_y.tolist() == [0.2, 2.0]
    assert moments.v_z.tolist() == [0.5, 0.2]
    assert moments.e.tolist() == [0.02, 0.98]
    assert moments.floored_y.tolist() == [True, False]
    assert moments.floored_z.tolist() == [False, True]
    assert moments.clipped.tolist() == [True, True]


def test_pooled_variance_floor():
    r = np.array([1, 1, 0, 0])
    f_vals = np.array([1.0, 3.0, 0.0, 0.0])
    g_vals = np.array([0.0, 0.0, 5.0, 7.0])
    expected = 1e-8 * np.var([1, 3, 5, 7], ddof=1)
    assert pooled_variance_floor(f_vals, g_vals, r, 1e-8) == pytest.approx(expected)
    assert pooled_variance_floor(np.ones(4), np.ones(4), r, 1e-8) == 1e-8


def test_constant_propensity_positivity():
    report = positivity_report(_moments(np.full(1000, 0.5)))
    assert report.e_min == 0.5
    assert report.mean_inv_e4 == pytest.approx(16.0)
    assert report.mean_inv_one_minus_e4 == pytest.approx(16.0)
    assert report.flags == ()


def test_single_clipped_row_is_not_flagged():
    e = np.full(1000, 0.5)
    e[0] = 0.01
    report = positivity_report(_moments(e))
    assert report.clipped == 1
    assert report.flags == ()


def test_many_clipped_rows_are_flagged():
    e = np.full(1000, 0.5)
    e[:50] = 0.01
    report = positivity_report(_moments(e))
    assert report.clipped == 50
    assert "PropensityClipping" in report.flags


def test_arm_values(linear_data):
    f_vals, g_vals = arm_values(linear_data, Product())
    assert np.all(f_vals[linear_data.r == 0] == 0.0)
    assert np.all(g_vals[linear_data.r == 1] == 0.0)
    assert np.allclose(f_vals[linear_data.r == 1], linear_data.y[linear_data.r == 1, 0])
    with pytest.raises(ScalarEstimandRequiredError):
        arm_values(linear_data, Product(p_f=2))


def test_deterministic_responses_hit_the_variance_floor():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 2))
    r = np.tile([1, 0], 100)
    data = FusedDataset.from_arrays(x, r, x[:, 0], x[:, 1] + rng.normal(size=200))
    config = NuisanceConfig(learner=LearnerConfig(lambda_grid=(1e-10,)))
    folds = kfold_split(200, 2, 0)
    fit, moments = estimate_nuisances(data, Product(), folds, config, seed=1)
    assert np.allclose(moments.v_y, fit.variance_floor)
    assert moments.floored_y.all()
    assert not moments.floored_z.any()
    assert "DegenerateVariance" in positivity_report(moments).flags


def test_estimation_is_deterministic_across_thread_counts(linear_data):
    folds = kfold_split(linear_data.n, 3, 5)

    def run(threads):
        config = NuisanceConfig(threads=threads)
        return estimate_nuisances(linear_data, Product(), folds, config, seed=9)[1]

    one, again, many = run(1), run(1), run(3)
    for field in ("m_y", "m_z", "v_y", "v_z", "e"):
        assert np.array_equal(getattr(one, field), getattr(again, field))
        assert np.array_equal(getattr(one, field), getattr(many, field))


def test_known_propensity_bypasses_estimation(linear_data):
    config = NuisanceConfig(known_propensity=lambda x: np.full(x.shape[0], 0.3))
    folds = kfold_split(linear_data.n, 2, 0)
    fit, moments = estimate_nuisances(linear_data, Product(), folds, config, seed=0)
    assert np.all(moments.e == 0.3)
    assert fit.flags() == []


def test_shared_propensity_matches_the_nuisance_fit(linear_data):
    folds = kfold_split(linear_data.n, 2, 4)
    config = NuisanceConfig()
    _, moments = estimate_nuisances(linear_data, Product(), folds, config, seed=2)
    e, clipped = cross_fit_propensity(linear_data, folds, NuisanceConfig(), seed=2)
    assert np.array_equal(e, moments.e)
    assert not clipped.any()


def test_training_folds_need_both_arms():
    x = np.arange(6.0)
    r = np.array([1, 1, 1, 1, 1, 0])
    data = FusedDataset.from_arrays(x, r, x, x)
    folds = kfold_split(6, 2, 0)
    with pytest.raises(EmptyArmError):
        estimate_nuisances(data, Product(), folds, NuisanceConfig(), seed=0)


def test_fold_moments_ignore_their_own_responses(linear_data):
    folds = kfold_split(linear_data.n, 2, 3)
    rows = folds.test_rows(0)
    y = linear_data.y[:, 0].copy()
    shifted = rows[linear_data.r[rows] == 1]
    y[shifted] += 100.0
    z = linear_data.z[:, 0]
    perturbed = FusedDataset.from_arrays(linear_data.x, linear_data.r, y, z)
    config = NuisanceConfig()
    _, base = estimate_nuisances(linear_data, Product(), folds, config, seed=4)
    _, moved = estimate_nuisances(perturbed, Product(), folds, config, seed=4)
    assert shifted.size > 0
    assert np.array_equal(base.m_y[rows], moved.m_y[rows])
    other = folds.test_rows(1)
    assert not np.array_equal(base.m_y[other], moved.m_y[other])


def _mean_error(spec, n, seeds):
    errors = []
    for seed in seeds:
        data = sample_dgp(spec, n, seed=seed).data
        config = NuisanceConfig(known_propensity=spec.propensity)
        folds = kfold_split(n, 2, seed)
        _, moments = estimate_nuisances(data, spec.estimand(), folds, config, seed=seed)
        errors.append(np.mean(np.abs(moments.m_y - spec.true_moments(data.x)[0])))
    return float(np.mean(errors))


def test_moment_error_shrinks_with_sample_size():
    spec = ValidationStudy()
    seeds = range(4)
    assert _mean_error(spec, 2000, seeds) < _mean_error(spec, 500, seeds)
