"""Decomposable estimands h(y, z, x) = f(y, x)^T g(z, x) and identifiable moments."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Literal, Optional, Sequence

import numpy as np
import numpy.typing as npt

from .utils import DimensionMismatchError, FloatArray, SupportError, UsageError, as_2d

SUPPORT_LIMIT = 1e12

type ArmFunction = Callable[[FloatArray, FloatArray], npt.ArrayLike]


def _checked(values: npt.ArrayLike, *, rows: int, p_f: int, what: str) -> FloatArray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape != (rows, p_f):
        raise DimensionMismatchError(
            f"expected {what} to have shape {(rows, p_f)}, got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise SupportError(f"{what} is not finite on the data's support")
    if np.any(np.abs(arr) > SUPPORT_LIMIT):
        raise SupportError(
            f"{what} exceeds {SUPPORT_LIMIT:g} in absolute value on the data's support"
        )
    return arr


def _optional_vector(values: Optional[Sequence[float]]) -> Optional[FloatArray]:
    return None if values is None else np.asarray(values, dtype=np.float64)


class DecomposableEstimand(ABC):
    """Pair (f, g) with h(y, z, x) = f(y, x)^T g(z, x); both map rows to R^{p_f}."""

    name: str
    p_f: int

    @abstractmethod
    def _f(self, y: FloatArray, x: FloatArray) -> npt.ArrayLike: ...

    @abstractmethod
    def _g(self, z: FloatArray, x: FloatArray) -> npt.ArrayLike: ...

    def f(self, y: npt.ArrayLike, x: npt.ArrayLike) -> FloatArray:
        y_arr = as_2d(y, name="y")
        x_arr = as_2d(x, name="x")
        return _checked(
            self._f(y_arr, x_arr),
            rows=y_arr.shape[0],
            p_f=self.p_f,
            what=f"f of {self.name}",
        )

    def g(self, z: npt.ArrayLike, x: npt.ArrayLike) -> FloatArray:
        z_arr = as_2d(z, name="z")
        x_arr = as_2d(x, name="x")
        return _checked(
            self._g(z_arr, x_arr),
            rows=z_arr.shape[0],
            p_f=self.p_f,
            what=f"g of {self.name}",
        )

    def h(self, y: npt.ArrayLike, z: npt.ArrayLike, x: npt.ArrayLike) -> FloatArray:
        return np.sum(self.f(y, x) * self.g(z, x), axis=1)

    def params(self) -> Dict[str, Any]:
        return {}


class Product(DecomposableEstimand):
    """E[Y^T Z]: f = y, g = z."""

    def __init__(self, p_f: int = 1):
        self.name = "product"
        self.p_f = p_f

    def _f(self, y: FloatArray, x: FloatArray) -> npt.ArrayLike:
        return y

    def _g(self, z: FloatArray, x: FloatArray) -> npt.ArrayLike:
        return z


class Ratio(DecomposableEstimand):
    """E[Y / Z]: f = y, g = 1/z. Keeping z away from 0 is up to the caller."""

    def __init__(self) -> None:
        self.name = "ratio"
        self.p_f = 1

    def _f(self, y: FloatArray, x: FloatArray) -> npt.ArrayLike:
        return y[:, :1]

    def _g(self, z: FloatArray, x: FloatArray) -> npt.ArrayLike:
        with np.errstate(divide="ignore"):
            return 1.0 / z[:, :1]


class ThresholdProduct(DecomposableEstimand):
    """Joint CDF P(Y <= c_y, Z <= c_z)."""

    def __init__(self, c_y: float = 0.0, c_z: float = 0.0):
        self.name = "threshold-product"
        self.p_f = 1
        self.c_y = float(c_y)
        self.c_z = float(c_z)

    def _f(self, y: FloatArray, x: FloatArray) -> npt.ArrayLike:
        return (y[:, :1] <= self.c_y).astype(np.float64)

    def _g(self, z: FloatArray, x: FloatArray) -> npt.ArrayLike:
        return (z[:, :1] <= self.c_z).astype(np.float64)

    def params(self) -> Dict[str, Any]:
        return {"c_y": self.c_y, "c_z": self.c_z}


class LinearContrast(DecomposableEstimand):
    """f = y * (a + b^T x), g = c^T z.

    With a = 1, b = 0 and c = (1, -rho) / (1 - rho^2) this is the regression
    coefficient beta_1 of a validation study.
    """

    def __init__(
        self,
        *,
        y_intercept: float = 1.0,
        y_slope: Optional[Sequence[float]] = None,
        z_contrast: Optional[Sequence[float]] = None,
    ):
        self.name = "linear-contrast"
        self.p_f = 1
        self.y_intercept = float(y_intercept)
        self.y_slope = _optional_vector(y_slope)
        self.z_contrast = _optional_vector(z_contrast)

    def _f(self, y: FloatArray, x: FloatArray) -> npt.ArrayLike:
        weight = np.full(y.shape[0], self.y_intercept)
        if self.y_slope is not None:
            if self.y_slope.shape[0] != x.shape[1]:
                raise DimensionMismatchError(
                    f"y_slope has {self.y_slope.shape[0]} entries "
                    f"but x has {x.shape[1]} columns"
                )
            weight = weight + x @ self.y_slope
        return y[:, 0] * weight

    def _g(self, z: FloatArray, x: FloatArray) -> npt.ArrayLike:
        contrast = np.ones(z.shape[1]) if self.z_contrast is None else self.z_contrast
        if contrast.shape[0] != z.shape[1]:
            raise DimensionMismatchError(
                f"z_contrast has {contrast.shape[0]} entries "
                f"but z has {z.shape[1]} columns"
            )
        return z @ contrast

    def params(self) -> Dict[str, Any]:
        return {
            "y_intercept": self.y_intercept,
            "y_slope": None if self.y_slope is None else self.y_slope.tolist(),
            "z_contrast": None if self.z_contrast is None else self.z_contrast.tolist(),
        }


class FunctionPair(DecomposableEstimand):
    """User-supplied (f, g) pair."""

    def __init__(self, name: str, f: ArmFunction, g: ArmFunction, *, p_f: int = 1):
        self.name = name
        self.p_f = p_f
        self.__f = f
        self.__g = g

    def _f(self, y: FloatArray, x: FloatArray) -> npt.ArrayLike:
        return self.__f(y, x)

    def _g(self, z: FloatArray, x: FloatArray) -> npt.ArrayLike:
        return self.__g(z, x)


_REGISTRY: Dict[str, Callable[..., DecomposableEstimand]] = {
    "product": Product,
    "ratio": Ratio,
    "threshold-product": ThresholdProduct,
    "linear-contrast": LinearContrast,
}


def register_estimand(name: str, factory: Callable[..., DecomposableEstimand]) -> None:
    if name in _REGISTRY:
        raise ValueError(f"estimand `{name}` is already registered")
    _REGISTRY[name] = factory


def available_estimands() -> list[str]:
    return sorted(_REGISTRY)


def make_estimand(name: str, **params: Any) -> DecomposableEstimand:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UsageError(
            f"unknown estimand `{name}`, expected one of {available_estimands()}"
        ) from None
    try:
        return factory(**params)
    except TypeError as error:
        raise UsageError(f"bad parameters for estimand `{name}`: {error}") from error


@dataclass(frozen=True)
class IdentifiableTarget:
    """Point-identified moment E[fn(., X)] on one arm.

    ``arm="x"`` gives E[fn(X)], ``arm="y"`` gives E[fn(Y, X)] learned from r=1
    rows and ``arm="z"`` gives E[fn(Z, X)] learned from r=0 rows. For the x arm
    ``fn`` receives the covariates twice.
    """

    name: str
    arm: Literal["x", "y", "z"]
    fn: ArmFunction = field(compare=False)

    def evaluate(self, values: FloatArray, x: FloatArray) -> FloatArray:
        out = np.asarray(self.fn(values, x), dtype=np.float64).ravel()
        if out.shape[0] != x.shape[0]:
            raise DimensionMismatchError(
                f"target {self.name} returned {out.shape[0]} values "
                f"for {x.shape[0]} rows"
            )
        if not np.all(np.isfinite(out)) or np.any(np.abs(out) > SUPPORT_LIMIT):
            raise SupportError(
                f"target {self.name} is not finite on the data's support"
            )
        return out


def x_moment(
    name: str, fn: Callable[[FloatArray], npt.ArrayLike]
) -> IdentifiableTarget:
    return IdentifiableTarget(name=name, arm="x", fn=lambda _, x: fn(x))


def y_moment(name: str, fn: ArmFunction) -> IdentifiableTarget:
    return IdentifiableTarget(name=name, arm="y", fn=fn)


def z_moment(name: str, fn: ArmFunction) -> IdentifiableTarget:
    return IdentifiableTarget(name=name, arm="z", fn=fn)
