import numpy as np
import pytest

from fusion_bounds.numerics import (
    central_diff_gradient,
    cs_variance_term,
    cs_variance_terms,
    sym_psd_sqrt,
)
from fusion_bounds.utils import (
    DimensionMismatchError,
    IndefiniteInputError,
    NonFiniteEvaluationError,
    NonSymmetricError,
)


def test_sqrt_of_identity():
    assert np.allclose(sym_psd_sqrt(np.eye(2)), np.eye(2))


def test_sqrt_of_diagonal():
    assert np.allclose(sym_psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_sqrt_multiplies_back():
    b = np.random.default_rng(3).normal(size=(5, 4))
    a = b.T @ b
    root = sym_psd_sqrt(a)
    assert np.allclose(root, root.T)
    assert np.linalg.norm(root @ root - a) <= 1e-9 * np.linalg.norm(a)


def test_sqrt_clamps_roundoff_negatives():
    v = np.array([1.0, 1.0]) / np.sqrt(2.0)
    a = np.outer(v, v) - 1e-14 * np.eye(2)
    root = sym_psd_sqrt(a)
    assert np.all(np.isfinite(root))


def test_sqrt_rejects_asymmetric():
    with pytest.raises(NonSymmetricError):
        sym_psd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_sqrt_rejects_indefinite():
    with pytest.raises(IndefiniteInputError):
        sym_psd_sqrt(np.diag([1.0, -1.0]))


@pytest.mark.parametrize(
    "vy, vz, expected",
    [
        (1.0, 4.0, 2.0),
        (np.eye(2), np.eye(2), 2.0),
        (np.diag([1.0, 4.0]), np.diag([9.0, 16.0]), 11.0),
    ],
)
def test_cs_variance_term(vy, vz, expected):
    assert cs_variance_term(vy, vz) == pytest.approx(expected, abs=1e-12)


def test_cs_variance_term_is_symmetric_in_its_arguments():
    rng = np.random.default_rng(11)
    b1, b2 = rng.normal(size=(2, 3, 3))
    vy, vz = b1.T @ b1, b2.T @ b2
    assert cs_variance_term(vy, vz) == pytest.approx(cs_variance_term(vz, vy), rel=1e-9)


def test_sqrt_spectrum_is_the_root_of_the_input_spectrum():
    rng = np.random.default_rng(3)
    b = rng.normal(size=(4, 4))
    a = b.T @ b
    root = sym_psd_sqrt(a)
    expected = np.sqrt(np.linalg.eigvalsh(a))
    np.testing.assert_allclose(np.linalg.eigvalsh(root), expected, atol=1e-9)


def test_cs_variance_term_scales_with_its_first_argument():
    rng = np.random.default_rng(4)
    b1, b2 = rng.normal(size=(2, 3, 3))
    vy, vz = b1.T @ b1, b2.T @ b2
    expected = 3.0 * cs_variance_term(vy, vz)
    assert cs_variance_term(9.0 * vy, vz) == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("vy, vz", [(0.7, 2.3), (4.0, 0.0), (1e-3, 50.0)])
def test_one_dimensional_matrices_match_scalars(vy, vz):
    scalar = cs_variance_term(vy, vz)
    assert abs(cs_variance_term([[vy]], [[vz]]) - scalar) <= 1e-12
    # a zero second block forces the eigendecomposition route
    padded = cs_variance_term(np.diag([vy, 0.0]), np.diag([vz, 0.0]))
    assert abs(padded - scalar) <= 1e-12
    stacked = cs_variance_terms(np.full((3, 1, 1), vy), np.full((3, 1, 1), vz))
    assert np.all(np.abs(stacked - scalar) <= 1e-12)


def test_cs_variance_term_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        cs_variance_term(np.eye(2), np.eye(3))


def test_cs_variance_terms_row_wise():
    out = cs_variance_terms(np.array([1.0, 4.0, 0.0]), np.array([4.0, 9.0, 5.0]))
    assert np.allclose(out, [2.0, 6.0, 0.0])


def test_gradient_of_quadratic():
    grad = central_diff_gradient(lambda x: float(x @ x), [1.0, 2.0])
    assert np.allclose(grad, [2.0, 4.0], atol=1e-6)


def test_gradient_of_constant():
    grad = central_diff_gradient(lambda x: 3.0, [0.5, -1.0, 2.0])
    assert np.array_equal(grad, np.zeros(3))


def test_gradient_of_matrix_inverse_entry():
    b = np.array([1.0, -2.0])

    def matrix(theta):
        return np.array([[theta[0], theta[1]], [theta[1], theta[2]]])

    def fn(theta):
        return float(np.linalg.solve(matrix(theta), b)[0])

    theta = np.array([3.0, 0.5, 2.0])
    a_inv = np.linalg.inv(matrix(theta))
    basis = [
        np.array([[1.0, 0.0], [0.0, 0.0]]),
        np.array([[0.0, 1.0], [1.0, 0.0]]),
        np.array([[0.0, 0.0], [0.0, 1.0]]),
    ]
    expected = np.array([-(a_inv @ e_k @ a_inv @ b)[0] for e_k in basis])
    assert np.allclose(central_diff_gradient(fn, theta), expected, atol=1e-5)


def test_gradient_reports_non_finite_evaluations():
    with pytest.raises(NonFiniteEvaluationError):
        central_diff_gradient(lambda x: float("inf") if x[0] > 0 else 0.0, [0.0])
