"""Delta-method composition of several estimates.

The OLS coefficient on z and Var(Y - Z) are the built-in composed targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .dataset import FusedDataset
from .estimands import IdentifiableTarget, Product, x_moment, y_moment, z_moment
from .estimator import (
    InferenceConfig,
    IntervalResult,
    confidence_limits,
    infer,
    infer_identifiable,
    shared_propensity,
)
from .numerics import central_diff_gradient
from .utils import (
    DimensionMismatchError,
    FloatArray,
    LengthMismatchError,
    NonFiniteEvaluationError,
    SingularCompositionError,
    logger,
    merge_flags,
)

type GradMode = Literal["analytic", "finite-difference"]
type ScalarMap = Callable[[FloatArray], float]
type GradientMap = Callable[[FloatArray], FloatArray]

KINK_RTOL = 1e-6
MAX_CONDITION = 1e12


def joint_influence_covariance(components: Sequence[npt.ArrayLike]) -> FloatArray:
    """(1/n) sum_i psi_i psi_i^T over the stacked per-observation influence values."""
    if not components:
        raise LengthMismatchError("no influence vectors to stack")
    arrays = [np.asarray(c, dtype=np.float64).ravel() for c in components]
    lengths = {a.shape[0] for a in arrays}
    if len(lengths) != 1:
        raise LengthMismatchError(
            f"influence vectors have different lengths {sorted(lengths)}"
        )
    psi = np.vstack(arrays)
    cov = psi @ psi.T / psi.shape[1]
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class ComponentEstimate:
    name: str
    estimate: float
    influence: FloatArray

    @classmethod
    def lower(cls, name: str, result: IntervalResult) -> ComponentEstimate:
        return cls(
            name=name, estimate=result.theta_l_hat, influence=result.influence_lower
        )

    @classmethod
    def upper(cls, name: str, result: IntervalResult) -> ComponentEstimate:
        return cls(
            name=name, estimate=result.theta_u_hat, influence=result.influence_upper
        )


@dataclass(frozen=True)
class ComposedTarget:
    """Maps s_L, s_U of a vector of component estimates.

    With ``grad_mode="analytic"`` both gradient maps must be given.
    """

    components: Tuple[ComponentEstimate, ...]
    s_lower: ScalarMap = field(compare=False)
    s_upper: ScalarMap = field(compare=False)
    grad_lower: Optional[GradientMap] = field(default=None, compare=False)
    grad_upper: Optional[GradientMap] = field(default=None, compare=False)
    grad_mode: GradMode = "finite-difference"
    rel_step: float = 1e-6
    flags: Tuple[str, ...] = ()

    @property
    def estimates(self) -> FloatArray:
        return np.array([c.estimate for c in self.components])

    def gradients(self) -> Tuple[FloatArray, FloatArray]:
        point = self.estimates
        if self.grad_mode == "analytic":
            if self.grad_lower is None or self.grad_upper is None:
                raise ValueError(
                    "analytic gradient mode needs grad_lower and grad_upper"
                )
            grads = (
                np.asarray(self.grad_lower(point), dtype=np.float64),
                np.asarray(self.grad_upper(point), dtype=np.float64),
            )
        else:
            grads = (
                central_diff_gradient(self.s_lower, point, self.rel_step),
                central_diff_gradient(self.s_upper, point, self.rel_step),
            )
        for grad in grads:
            if grad.shape != point.shape:
                raise DimensionMismatchError(
                    f"gradient has shape {grad.shape}, expected {point.shape}"
                )
        return grads


def compose_delta(target: ComposedTarget, alpha: float) -> IntervalResult:
    """Delta-method CI for [s_L(theta), s_U(theta)] from the joint influence matrix."""
    point = target.estimates
    theta_l = float(target.s_lower(point))
    theta_u = float(target.s_upper(point))
    if not (np.isfinite(theta_l) and np.isfinite(theta_u)):
        raise NonFiniteEvaluationError(
            f"composed bounds are not finite: ({theta_l}, {theta_u})"
        )
    grad_l, grad_u = target.gradients()

    psi = np.vstack([c.influence for c in target.components])
    covariance = joint_influence_covariance(list(psi))
    v_l = float(max(grad_l @ covariance @ grad_l, 0.0))
    v_u = float(max(grad_u @ covariance @ grad_u, 0.0))
    n = psi.shape[1]
    lcb, ucb = confidence_limits(theta_l, theta_u, v_l, v_u, n, alpha)

    flags = list(target.flags)
    if theta_l > theta_u:
        logger.warning(
            "CrossedBounds: composed lower bound %.6g exceeds upper bound %.6g",
            theta_l,
            theta_u,
        )
        flags = merge_flags(flags, ["CrossedBounds"])
    return IntervalResult(
        theta_l_hat=theta_l,
        theta_u_hat=theta_u,
        v_l_hat=v_l,
        v_u_hat=v_u,
        lcb=lcb,
        ucb=ucb,
        alpha=alpha,
        n=n,
        influence_lower=grad_l @ psi,
        influence_upper=grad_u @ psi,
        flags=tuple(flags),
        diagnostics={
            "components": [c.name for c in target.components],
            "estimates": point.tolist(),
            "grad_lower": grad_l.tolist(),
            "grad_upper": grad_u.tolist(),
            "grad_mode": target.grad_mode,
        },
    )


def _vech_index(d: int) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i, d)]


@dataclass(frozen=True)
class OlsLayout:
    """Positions of vech(A), b and (L, U) in the stacked estimates, X~ = (1, x, z)."""

    d: int

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return _vech_index(self.d)

    @property
    def n_a(self) -> int:
        return self.d * (self.d + 1) // 2

    def unpack(self, theta: FloatArray) -> Tuple[FloatArray, FloatArray, float, float]:
        a = np.zeros((self.d, self.d))
        for value, (i, j) in zip(theta[: self.n_a], self.pairs):
            a[i, j] = a[j, i] = value
        b = theta[self.n_a : self.n_a + self.d - 1]
        return a, b, float(theta[-2]), float(theta[-1])

    def solve(
        self, theta: FloatArray
    ) -> Tuple[FloatArray, FloatArray, FloatArray, float, float]:
        """Returns (A, v = A^-1 e_d, u = A^-1 w) with w = (b, L), and L, U."""
        a, b, low, up = self.unpack(theta)
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise SingularCompositionError(
                "second-moment matrix of (1, x, z) is singular "
                f"(condition number {cond:.3e})"
            )
        a_inv = np.linalg.inv(a)
        v = a_inv[:, -1]
        u = a_inv @ np.append(b, low)
        return a, v, u, low, up

    def s_lower(self, theta: FloatArray) -> float:
        _, v, u, low, up = self.solve(theta)
        w = np.append(self.unpack(theta)[1], low)
        return float(v @ w - max(-v[-1], 0.0) * (up - low))

    def s_upper(self, theta: FloatArray) -> float:
        _, v, u, low, up = self.solve(theta)
        w = np.append(self.unpack(theta)[1], low)
        return float(v @ w + max(v[-1], 0.0) * (up - low))

    def _gradient(self, theta: FloatArray, upper: bool) -> FloatArray:
        _, v, u, low, up = self.solve(theta)
        v_d = v[-1]
        width = up - low
        # one-sided derivative 0 at the kink
        if upper:
            kink_slope = -width if v_d > 0 else 0.0
            slope = max(v_d, 0.0)
            d_low, d_up = v_d - slope, slope
        else:
            kink_slope = -width if v_d < 0 else 0.0
            slope = max(-v_d, 0.0)
            d_low, d_up = v_d + slope, -slope
        grad = np.zeros_like(theta)
        for idx, (i, j) in enumerate(self.pairs):
            if i == j:
                d_vu = v[i] * u[i]
                d_vv = v[i] * v[i]
            else:
                d_vu = v[i] * u[j] + v[j] * u[i]
                d_vv = 2.0 * v[i] * v[j]
            grad[idx] = -d_vu + kink_slope * d_vv
        grad[self.n_a : self.n_a + self.d - 1] = v[:-1]
        grad[-2] = d_low
        grad[-1] = d_up
        return grad

    def kinked(self, theta: FloatArray) -> bool:
        """True when an entry of A^-1 e_d is within ``KINK_RTOL`` (relative) of 0."""
        _, v, _, _, _ = self.solve(theta)
        tol = KINK_RTOL * max(1.0, float(np.max(np.abs(v))))
        return bool(np.any(np.abs(v) < tol))

    def grad_lower(self, theta: FloatArray) -> FloatArray:
        return self._gradient(theta, upper=False)

    def grad_upper(self, theta: FloatArray) -> FloatArray:
        return self._gradient(theta, upper=True)


def _ols_targets(
    p_x: int,
) -> Tuple[List[IdentifiableTarget], List[IdentifiableTarget]]:
    """Identifiable entries of vech(E[X~ X~^T]) and E[(1, x) Y], X~ = (1, x, z)."""

    def x_column(x: FloatArray, i: int) -> FloatArray:
        return np.ones(x.shape[0]) if i == 0 else x[:, i - 1]

    d = p_x + 2
    a_targets: List[IdentifiableTarget] = []
    for i, j in _vech_index(d):
        name = f"a[{i},{j}]"
        if j < d - 1:
            a_targets.append(
                x_moment(name, lambda x, i=i, j=j: x_column(x, i) * x_column(x, j))
            )
        elif i < d - 1:
            a_targets.append(
                z_moment(name, lambda z, x, i=i: z[:, 0] * x_column(x, i))
            )
        else:
            a_targets.append(z_moment(name, lambda z, x: z[:, 0] ** 2))
    b_targets = [
        y_moment(f"b[{i}]", lambda y, x, i=i: y[:, 0] * x_column(x, i))
        for i in range(d - 1)
    ]
    return a_targets, b_targets


def ols_coefficient_bounds(
    data: FusedDataset,
    config: InferenceConfig,
    *,
    grad_mode: GradMode = "analytic",
) -> IntervalResult:
    """Bounds on the z coefficient of the OLS regression of y on (1, x, z).

    E[X~ X~^T] and E[(1, x) Y] are point-identified; E[ZY] only has the
    Cauchy-Schwarz bounds of the Product estimand, which enter through s_L and s_U.
    """
    if data.p_y != 1 or data.p_z != 1:
        raise DimensionMismatchError(
            f"ols target needs scalar y and z, got p_y={data.p_y}, p_z={data.p_z}"
        )
    layout = OlsLayout(d=data.p_x + 2)
    a_targets, b_targets = _ols_targets(data.p_x)

    components: List[ComponentEstimate] = []
    flags: List[str] = []
    propensity = shared_propensity(data, config)
    for target in [*a_targets, *b_targets]:
        result = infer_identifiable(data, target, config, propensity=propensity)
        components.append(ComponentEstimate.lower(target.name, result))
        flags = merge_flags(flags, list(result.flags))
    product = infer(data, Product(), config)
    components.append(ComponentEstimate.lower("e[zy].lower", product))
    components.append(ComponentEstimate.upper("e[zy].upper", product))
    flags = merge_flags(flags, list(product.flags))

    if layout.kinked(np.array([c.estimate for c in components])):
        logger.warning(
            "KinkWarning: an entry of A^-1 e_d is within %.0e (relative) of 0",
            KINK_RTOL,
        )
        flags = merge_flags(flags, ["KinkWarning"])

    target_map = ComposedTarget(
        components=tuple(components),
        s_lower=layout.s_lower,
        s_upper=layout.s_upper,
        grad_lower=layout.grad_lower,
        grad_upper=layout.grad_upper,
        grad_mode=grad_mode,
        flags=tuple(flags),
    )
    result = compose_delta(target_map, config.alpha)
    diagnostics = {**result.diagnostics, "product": product.to_dict()}
    return replace(result, diagnostics=diagnostics)


def difference_variance_bounds(
    data: FusedDataset,
    config: InferenceConfig,
    *,
    grad_mode: GradMode = "analytic",
) -> IntervalResult:
    """Bounds on Var(Y - Z) = E[Y^2] + E[Z^2] - (E[Y] - E[Z])^2 - 2 E[YZ]."""
    if data.p_y != 1 or data.p_z != 1:
        raise DimensionMismatchError(
            "difference variance needs scalar y and z, "
            f"got p_y={data.p_y}, p_z={data.p_z}"
        )
    moments = [
        y_moment("e[y^2]", lambda y, x: y[:, 0] ** 2),
        z_moment("e[z^2]", lambda z, x: z[:, 0] ** 2),
        y_moment("e[y]", lambda y, x: y[:, 0]),
        z_moment("e[z]", lambda z, x: z[:, 0]),
    ]
    components: List[ComponentEstimate] = []
    flags: List[str] = []
    propensity = shared_propensity(data, config)
    for target in moments:
        result = infer_identifiable(data, target, config, propensity=propensity)
        components.append(ComponentEstimate.lower(target.name, result))
        flags = merge_flags(flags, list(result.flags))
    product = infer(data, Product(), config)
    components.append(ComponentEstimate.lower("e[yz].lower", product))
    components.append(ComponentEstimate.upper("e[yz].upper", product))
    flags = merge_flags(flags, list(product.flags))

    def base(theta: FloatArray) -> float:
        return float(theta[0] + theta[1] - (theta[2] - theta[3]) ** 2)

    def gradient(theta: FloatArray, product_index: int) -> FloatArray:
        diff = theta[2] - theta[3]
        grad = np.array([1.0, 1.0, -2.0 * diff, 2.0 * diff, 0.0, 0.0])
        grad[product_index] = -2.0
        return grad

    target_map = ComposedTarget(
        components=tuple(components),
        s_lower=lambda theta: base(theta) - 2.0 * float(theta[5]),
        s_upper=lambda theta: base(theta) - 2.0 * float(theta[4]),
        grad_lower=lambda theta: gradient(theta, 5),
        grad_upper=lambda theta: gradient(theta, 4),
        grad_mode=grad_mode,
        flags=tuple(flags),
    )
    return compose_delta(target_map, config.alpha)
