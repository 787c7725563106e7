"""Dense symmetric-matrix primitives for the multivariate bound and gradient checks."""

import math
from typing import Callable, Union

import numpy as np
import numpy.typing as npt
from scipy import linalg

from .utils import (
    DimensionMismatchError,
    FloatArray,
    IndefiniteInputError,
    NonFiniteEvaluationError,
    NonSymmetricError,
    logger,
)

SYMMETRY_RTOL = 1e-12
ROUNDOFF_RTOL = 1e-10
INDEFINITE_RTOL = 1e-6

type MatrixLike = Union[float, npt.ArrayLike]


def _max_abs(a: FloatArray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def as_sym_psd(a: MatrixLike, *, name: str = "matrix") -> FloatArray:
    """Validates ``a`` as a symmetric PSD matrix and returns it as a 2-D float array.

    Scalars are promoted to 1x1 matrices. Raises NonSymmetricError when the
    symmetry tolerance is violated and IndefiniteInputError when an eigenvalue
    is far enough below zero to signal a corrupted covariance.
    """
    arr = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise DimensionMismatchError(
            f"expected {name} to be a non-empty square matrix, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise IndefiniteInputError(f"{name} has non-finite entries")
    scale = _max_abs(arr)
    asym = _max_abs(arr - arr.T)
    if asym > SYMMETRY_RTOL * max(1.0, scale):
        raise NonSymmetricError(
            f"{name} is not symmetric (max |a_ij - a_ji| = {asym:.3e})"
        )
    return arr


def _clamped_eigh(arr: FloatArray, *, name: str) -> tuple[FloatArray, FloatArray]:
    sym = 0.5 * (arr + arr.T)
    eigvals, eigvecs = linalg.eigh(sym)
    scale = _max_abs(sym)
    lowest = float(eigvals.min())
    if lowest < -INDEFINITE_RTOL * scale:
        raise IndefiniteInputError(
            f"{name} has eigenvalue {lowest:.3e} below -{INDEFINITE_RTOL:g} * max|a|"
        )
    if lowest < -ROUNDOFF_RTOL * scale:
        logger.debug("clamping eigenvalue %.3e of %s to 0", lowest, name)
    return np.clip(eigvals, 0.0, None), eigvecs


def sym_psd_sqrt(a: MatrixLike) -> FloatArray:
    """Symmetric PSD square root via eigh, negative eigenvalues clamped to 0."""
    arr = as_sym_psd(a)
    eigvals, eigvecs = _clamped_eigh(arr, name="matrix")
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    return 0.5 * (root + root.T)


def cs_variance_term(vy: MatrixLike, vz: MatrixLike) -> float:
    """tr(sqrt(sqrt(vz) vy sqrt(vz))), equal to sqrt(vy * vz) in one dimension."""
    if np.ndim(vy) == 0 and np.ndim(vz) == 0:
        a, b = float(vy), float(vz)  # type: ignore[arg-type]
        if a < 0 or b < 0:
            raise IndefiniteInputError(
                f"variances must be non-negative, got {a} and {b}"
            )
        return math.sqrt(a * b)

    vy_arr = as_sym_psd(vy, name="vy")
    vz_arr = as_sym_psd(vz, name="vz")
    if vy_arr.shape != vz_arr.shape:
        raise DimensionMismatchError(
            f"vy has shape {vy_arr.shape} but vz has shape {vz_arr.shape}"
        )
    if vy_arr.shape == (1, 1):
        return cs_variance_term(float(vy_arr[0, 0]), float(vz_arr[0, 0]))

    root_z = sym_psd_sqrt(vz_arr)
    inner = root_z @ vy_arr @ root_z
    eigvals, _ = _clamped_eigh(inner, name="sqrt(vz) vy sqrt(vz)")
    return float(np.sum(np.sqrt(eigvals)))


def cs_variance_terms(vy: FloatArray, vz: FloatArray) -> FloatArray:
    """Row-wise ``cs_variance_term`` over stacked (n, p, p) or (n,) inputs."""
    vy = np.asarray(vy, dtype=np.float64)
    vz = np.asarray(vz, dtype=np.float64)
    if vy.shape != vz.shape:
        raise DimensionMismatchError(
            f"vy has shape {vy.shape} but vz has shape {vz.shape}"
        )
    if vy.ndim == 1:
        if np.any(vy < 0) or np.any(vz < 0):
            raise IndefiniteInputError("variances must be non-negative")
        return np.sqrt(vy * vz)
    return np.array([cs_variance_term(a, b) for a, b in zip(vy, vz)])


def central_diff_gradient(
    fn: Callable[[FloatArray], float],
    point: npt.ArrayLike,
    rel_step: float = 1e-6,
) -> FloatArray:
    """Central-difference gradient with steps ``rel_step * max(1, |point_i|)``."""
    if rel_step <= 0:
        raise ValueError(f"rel_step must be positive, got {rel_step}")
    base = np.asarray(point, dtype=np.float64).ravel()
    grad = np.empty_like(base)
    for i in range(base.size):
        step = rel_step * max(1.0, abs(base[i]))
        forward = base.copy()
        backward = base.copy()
        forward[i] += step
        backward[i] -= step
        f_plus = float(fn(forward))
        f_minus = float(fn(backward))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NonFiniteEvaluationError(
                f"function is not finite around coordinate {i} "
                f"(f(+h)={f_plus}, f(-h)={f_minus})"
            )
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad
