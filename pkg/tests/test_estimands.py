import numpy as np
import pytest

from fusion_bounds.estimands import (
    FunctionPair,
    LinearContrast,
    Product,
    Ratio,
    ThresholdProduct,
    available_estimands,
    make_estimand,
    register_estimand,
    y_moment,
)
from fusion_bounds.utils import DimensionMismatchError, SupportError, UsageError


def test_product_is_the_plain_product():
    h = Product().h([[2.0], [3.0]], [[4.0], [-1.0]], [[0.0], [0.0]])
    assert h.tolist() == [8.0, -3.0]


def test_ratio_inverts_z():
    g = Ratio().g([[2.0], [4.0]], [[0.0], [0.0]])
    assert g[:, 0].tolist() == [0.5, 0.25]


def test_ratio_rejects_zero_z():
    with pytest.raises(SupportError):
        Ratio().g([[0.0]], [[0.0]])


def test_threshold_product_indicators():
    est = ThresholdProduct(c_y=1.0, c_z=0.0)
    assert est.f([[0.5], [2.0]], [[0.0], [0.0]])[:, 0].tolist() == [1.0, 0.0]
    assert est.g([[-1.0], [1.0]], [[0.0], [0.0]])[:, 0].tolist() == [1.0, 0.0]


def test_linear_contrast_weights():
    est = LinearContrast(y_intercept=1.0, y_slope=[2.0], z_contrast=[1.0, -0.5])
    x = np.array([[1.0], [0.0]])
    assert est.f([[1.0], [2.0]], x)[:, 0].tolist() == [3.0, 2.0]
    assert est.g([[2.0, 2.0], [0.0, 4.0]], x)[:, 0].tolist() == [1.0, -2.0]


def test_linear_contrast_checks_dimensions():
    with pytest.raises(DimensionMismatchError):
        LinearContrast(z_contrast=[1.0, 0.0, 0.0]).g([[1.0, 2.0]], [[0.0]])


def test_function_pair_output_shape_is_checked():
    est = FunctionPair("pair", lambda y, x: np.hstack([y, y]), lambda z, x: z, p_f=2)
    assert est.f([[1.0]], [[0.0]]).shape == (1, 2)
    with pytest.raises(DimensionMismatchError):
        est.g([[1.0]], [[0.0]])


def test_values_beyond_the_support_limit_are_rejected():
    with pytest.raises(SupportError):
        Product().f([[1e13]], [[0.0]])


def test_registry():
    builtin = {"product", "ratio", "threshold-product", "linear-contrast"}
    assert builtin <= set(available_estimands())
    assert isinstance(make_estimand("threshold-product", c_y=1.0), ThresholdProduct)
    with pytest.raises(UsageError):
        make_estimand("no-such-estimand")
    with pytest.raises(UsageError):
        make_estimand("ratio", bogus=1)


def test_register_custom_estimand():
    def squared() -> FunctionPair:
        return FunctionPair("squared-product", lambda y, x: y**2, lambda z, x: z**2)

    register_estimand("squared-product", squared)
    value = make_estimand("squared-product").h([[2.0]], [[3.0]], [[0.0]])
    assert value.tolist() == [36.0]
    with pytest.raises(ValueError):
        register_estimand("squared-product", Product)


def test_identifiable_target_evaluation():
    target = y_moment("e[y x]", lambda y, x: y[:, 0] * x[:, 0])
    value = target.evaluate(np.array([[2.0], [3.0]]), np.array([[1.0], [-1.0]]))
    assert value.tolist() == [2.0, -3.0]
