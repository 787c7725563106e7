"""Cauchy-Schwarz plug-in bounds, their influence functions and cross-fitting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed
from scipy.stats import norm

from .dataset import FusedDataset
from .estimands import DecomposableEstimand, IdentifiableTarget
from .folds import FoldAssignment, kfold_split
from .learners import default_lambda_grid, fit_ridge_cv
from .numerics import cs_variance_terms
from .nuisance import (
    MomentEstimates,
    NuisanceConfig,
    PositivityReport,
    arm_values,
    cross_fit_propensity,
    estimate_arm_means,
    estimate_nuisances,
    positivity_report,
)
from .utils import (
    BoolArray,
    FloatArray,
    InputValidationError,
    IntArray,
    derive_seed,
    jsonable,
    logger,
    merge_flags,
)


@dataclass(frozen=True)
class InferenceConfig:
    """Cross-fitting settings; ``alpha=1`` is accepted and adds zero CI width."""

    k_folds: int = 2
    alpha: float = 0.05
    seed: int = 0
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise InputValidationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.k_folds < 2:
            raise InputValidationError(f"k_folds must be >= 2, got {self.k_folds}")

    def folds(self, n: int) -> FoldAssignment:
        return kfold_split(n, self.k_folds, derive_seed(self.seed, 0))

    @property
    def nuisance_seed(self) -> int:
        return derive_seed(self.seed, 1)


def normal_quantile(alpha: float) -> float:
    return float(norm.ppf(1.0 - alpha / 2.0))


@dataclass(frozen=True)
class IntervalResult:
    """Debiased bound estimates with a confidence interval for the identified region.

    ``influence_lower``/``influence_upper`` hold the per-observation influence
    values; they are what ``composition`` stacks for the delta method.
    """

    theta_l_hat: float
    theta_u_hat: float
    v_l_hat: float
    v_u_hat: float
    lcb: float
    ucb: float
    alpha: float
    n: int
    influence_lower: FloatArray
    influence_upper: FloatArray
    flags: Tuple[str, ...] = ()
    positivity: Optional[PositivityReport] = None
    fold_plugins: Tuple[Tuple[float, float], ...] = ()
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.ucb - self.lcb

    def with_alpha(self, alpha: float) -> IntervalResult:
        lcb, ucb = confidence_limits(
            self.theta_l_hat,
            self.theta_u_hat,
            self.v_l_hat,
            self.v_u_hat,
            self.n,
            alpha,
        )
        return replace(self, lcb=lcb, ucb=ucb, alpha=alpha)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "theta_l_hat": self.theta_l_hat,
            "theta_u_hat": self.theta_u_hat,
            "v_l_hat": self.v_l_hat,
            "v_u_hat": self.v_u_hat,
            "lcb": self.lcb,
            "ucb": self.ucb,
            "alpha": self.alpha,
            "n": self.n,
            "flags": list(self.flags),
            "fold_plugins": [list(p) for p in self.fold_plugins],
        }
        if self.positivity is not None:
            out["positivity"] = self.positivity.to_dict()
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return jsonable(out)  # type: ignore[no-any-return]


def confidence_limits(
    theta_l: float, theta_u: float, v_l: float, v_u: float, n: int, alpha: float
) -> Tuple[float, float]:
    q = normal_quantile(alpha)
    return theta_l - q * float(np.sqrt(v_l / n)), theta_u + q * float(np.sqrt(v_u / n))


def plugin_bounds(
    moments: MomentEstimates, fold_rows: npt.ArrayLike
) -> Tuple[float, float]:
    """Mean over ``fold_rows`` of m_Y m_Z -/+ sqrt(v_Y v_Z)."""
    rows = np.asarray(fold_rows, dtype=np.int64)
    if rows.size == 0:
        raise InputValidationError("plug-in bounds need at least one row")
    center = moments.m_y[rows] * moments.m_z[rows]
    spread = np.sqrt(moments.v_y[rows] * moments.v_z[rows])
    return float(np.mean(center - spread)), float(np.mean(center + spread))


def _eif(
    f: npt.ArrayLike,
    g: npt.ArrayLike,
    r: npt.ArrayLike,
    m_y: npt.ArrayLike,
    m_z: npt.ArrayLike,
    v_y: npt.ArrayLike,
    v_z: npt.ArrayLike,
    e: npt.ArrayLike,
    theta_plug: float,
    sign: float,
) -> FloatArray:
    r_arr = np.asarray(r, dtype=np.float64)
    # absent responses only ever meet a zero weight
    f_arr = np.where(r_arr == 1, np.asarray(f, dtype=np.float64), 0.0)
    g_arr = np.where(r_arr == 0, np.asarray(g, dtype=np.float64), 0.0)
    m_y_arr, m_z_arr, v_y_arr, v_z_arr, e_arr = (
        np.asarray(a, dtype=np.float64) for a in (m_y, m_z, v_y, v_z, e)
    )

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_zy = np.where(v_y_arr > 0, np.sqrt(v_z_arr / v_y_arr), 0.0)
        ratio_yz = np.where(v_z_arr > 0, np.sqrt(v_y_arr / v_z_arr), 0.0)
    res_y = f_arr - m_y_arr
    res_z = g_arr - m_z_arr
    phi_y = res_y * m_z_arr + sign * 0.5 * (res_y**2 - v_y_arr) * ratio_zy
    phi_z = res_z * m_y_arr + sign * 0.5 * (res_z**2 - v_z_arr) * ratio_yz
    center = m_y_arr * m_z_arr + sign * np.sqrt(v_y_arr * v_z_arr)
    weight_y = np.where(r_arr == 1, 1.0 / e_arr, 0.0)
    weight_z = np.where(r_arr == 0, 1.0 / (1.0 - e_arr), 0.0)
    return np.asarray(weight_y * phi_y + weight_z * phi_z + center - theta_plug)


def eif_upper(
    f: npt.ArrayLike,
    g: npt.ArrayLike,
    r: npt.ArrayLike,
    m_y: npt.ArrayLike,
    m_z: npt.ArrayLike,
    v_y: npt.ArrayLike,
    v_z: npt.ArrayLike,
    e: npt.ArrayLike,
    theta_u_plug: float,
) -> FloatArray:
    """Efficient influence function of the upper Cauchy-Schwarz bound, row-wise."""
    return _eif(f, g, r, m_y, m_z, v_y, v_z, e, theta_u_plug, 1.0)


def eif_lower(
    f: npt.ArrayLike,
    g: npt.ArrayLike,
    r: npt.ArrayLike,
    m_y: npt.ArrayLike,
    m_z: npt.ArrayLike,
    v_y: npt.ArrayLike,
    v_z: npt.ArrayLike,
    e: npt.ArrayLike,
    theta_l_plug: float,
) -> FloatArray:
    """Lower-bound counterpart of ``eif_upper``; every variance term changes sign."""
    return _eif(f, g, r, m_y, m_z, v_y, v_z, e, theta_l_plug, -1.0)


def infer(
    data: FusedDataset, estimand: DecomposableEstimand, config: InferenceConfig
) -> IntervalResult:
    """Debiased cross-fitted Cauchy-Schwarz bounds of E[f(Y, X) g(Z, X)], with CI."""
    folds = config.folds(data.n)
    fit, moments = estimate_nuisances(
        data, estimand, folds, config.nuisance, config.nuisance_seed
    )
    f_vals, g_vals = arm_values(data, estimand)

    influence_l = np.empty(data.n)
    influence_u = np.empty(data.n)
    plugins: List[Tuple[float, float]] = []
    debiased_l: List[float] = []
    debiased_u: List[float] = []
    for k in range(folds.k_folds):
        rows = folds.test_rows(k)
        plug_l, plug_u = plugin_bounds(moments, rows)
        sub = moments.take(rows)
        args = (
            f_vals[rows],
            g_vals[rows],
            data.r[rows],
            sub.m_y,
            sub.m_z,
            sub.v_y,
            sub.v_z,
            sub.e,
        )
        influence_l[rows] = eif_lower(*args, plug_l)
        influence_u[rows] = eif_upper(*args, plug_u)
        plugins.append((plug_l, plug_u))
        debiased_l.append(plug_l + float(np.mean(influence_l[rows])))
        debiased_u.append(plug_u + float(np.mean(influence_u[rows])))

    theta_l = float(np.mean(debiased_l))
    theta_u = float(np.mean(debiased_u))
    v_l = float(np.mean(influence_l**2))
    v_u = float(np.mean(influence_u**2))
    lcb, ucb = confidence_limits(theta_l, theta_u, v_l, v_u, data.n, config.alpha)

    positivity = positivity_report(moments)
    flags = merge_flags(list(positivity.flags), fit.flags())
    if theta_l > theta_u:
        logger.warning(
            "CrossedBounds: debiased lower bound %.6g exceeds upper bound %.6g",
            theta_l,
            theta_u,
        )
        flags = merge_flags(flags, ["CrossedBounds"])
    logger.info(
        "%s: theta_l=%.6g theta_u=%.6g ci=[%.6g, %.6g]",
        estimand.name,
        theta_l,
        theta_u,
        lcb,
        ucb,
    )
    return IntervalResult(
        theta_l_hat=theta_l,
        theta_u_hat=theta_u,
        v_l_hat=v_l,
        v_u_hat=v_u,
        lcb=lcb,
        ucb=ucb,
        alpha=config.alpha,
        n=data.n,
        influence_lower=influence_l,
        influence_upper=influence_u,
        flags=tuple(flags),
        positivity=positivity,
        fold_plugins=tuple(plugins),
        diagnostics={"nuisance": fit.diagnostics(), "fold_sizes": folds.sizes()},
    )


def infer_identifiable(
    data: FusedDataset,
    target: IdentifiableTarget,
    config: InferenceConfig,
    *,
    propensity: Optional[Tuple[FloatArray, BoolArray]] = None,
) -> IntervalResult:
    """AIPW cross-fitted estimate of a point-identified moment; both bounds coincide.

    ``propensity`` is an already cross-fitted e-hat (see ``shared_propensity``).
    """
    folds = config.folds(data.n)
    arm = estimate_arm_means(
        data,
        target,
        folds,
        config.nuisance,
        config.nuisance_seed,
        propensity=propensity,
    )

    if target.arm == "x":
        pseudo = arm.values
    elif target.arm == "y":
        weight = np.where(data.r == 1, 1.0 / arm.e, 0.0)
        pseudo = weight * (arm.values - arm.m_hat) + arm.m_hat
    else:
        weight = np.where(data.r == 0, 1.0 / (1.0 - arm.e), 0.0)
        pseudo = weight * (arm.values - arm.m_hat) + arm.m_hat

    fold_means = [
        float(np.mean(pseudo[folds.test_rows(k)])) for k in range(folds.k_folds)
    ]
    # pooled over rows, so unequal fold sizes do not reweight observations
    theta = float(np.mean(pseudo))
    influence = pseudo - theta
    variance = float(np.mean(influence**2))
    lcb, ucb = confidence_limits(theta, theta, variance, variance, data.n, config.alpha)

    flags: List[str] = []
    clipped = int(arm.clipped.sum())
    if clipped / data.n > 0.01:
        flags.append("PropensityClipping")
    logger.debug(
        "%s (%s arm): estimate=%.6g se=%.3g",
        target.name,
        target.arm,
        theta,
        np.sqrt(variance / data.n),
    )
    return IntervalResult(
        theta_l_hat=theta,
        theta_u_hat=theta,
        v_l_hat=variance,
        v_u_hat=variance,
        lcb=lcb,
        ucb=ucb,
        alpha=config.alpha,
        n=data.n,
        influence_lower=influence,
        influence_upper=influence.copy(),
        flags=tuple(flags),
        fold_plugins=tuple((m, m) for m in fold_means),
    )


def _fit_vector_moments(
    xs: FloatArray, targets: FloatArray, x_eval: FloatArray, cv_folds: int, seed: int
) -> Tuple[FloatArray, FloatArray]:
    """Column-wise ridge means plus the homoskedastic residual covariance."""
    p = targets.shape[1]
    grid = default_lambda_grid(*xs.shape)
    fitted = np.empty_like(targets)
    predicted = np.empty((x_eval.shape[0], p))
    for j in range(p):
        model = fit_ridge_cv(xs, targets[:, j], grid, cv_folds, derive_seed(seed, j))
        fitted[:, j] = model.predict(xs)
        predicted[:, j] = model.predict(x_eval)
    residuals = targets - fitted
    covariance = residuals.T @ residuals / residuals.shape[0]
    return predicted, 0.5 * (covariance + covariance.T)


def multivariate_plugin_bounds(
    data: FusedDataset, estimand: DecomposableEstimand, config: InferenceConfig
) -> Tuple[float, float]:
    """Cross-fitted plug-in value of the matrix Cauchy-Schwarz bounds for any p_f.

    Point values only: no influence function or CI is attached.
    """
    folds = config.folds(data.n)
    y_rows, z_rows = data.y_rows, data.z_rows
    f_vals = np.full((data.n, estimand.p_f), np.nan)
    g_vals = np.full((data.n, estimand.p_f), np.nan)
    f_vals[y_rows] = estimand.f(data.y[y_rows], data.x[y_rows])
    g_vals[z_rows] = estimand.g(data.z[z_rows], data.x[z_rows])
    cv_folds = config.nuisance.learner.cv_folds

    def fold_values(k: int) -> Tuple[IntArray, FloatArray, FloatArray]:
        train, test = folds.train_rows(k), folds.test_rows(k)
        train_y = train[data.r[train] == 1]
        train_z = train[data.r[train] == 0]
        seed = derive_seed(config.nuisance_seed, k)
        m_y, v_y = _fit_vector_moments(
            data.x[train_y],
            f_vals[train_y],
            data.x[test],
            cv_folds,
            derive_seed(seed, 0),
        )
        m_z, v_z = _fit_vector_moments(
            data.x[train_z],
            g_vals[train_z],
            data.x[test],
            cv_folds,
            derive_seed(seed, 1),
        )
        rows = test.shape[0]
        spread = cs_variance_terms(
            np.broadcast_to(v_y, (rows, *v_y.shape)),
            np.broadcast_to(v_z, (rows, *v_z.shape)),
        )
        return test, np.sum(m_y * m_z, axis=1), spread

    results = Parallel(n_jobs=config.nuisance.threads, backend="threading")(
        delayed(fold_values)(k) for k in range(folds.k_folds)
    )
    center = np.empty(data.n)
    spread = np.empty(data.n)
    for test, c, s in results:
        center[test] = c
        spread[test] = s
    return float(np.mean(center - spread)), float(np.mean(center + spread))


def shared_propensity(
    data: FusedDataset, config: InferenceConfig
) -> Tuple[FloatArray, BoolArray]:
    """Cross-fitted e-hat on ``config``'s folds, shared across identifiable targets."""
    return cross_fit_propensity(
        data, config.folds(data.n), config.nuisance, config.nuisance_seed
    )
