"""Cross-fitted estimation of m_Y, m_Z, v_Y, v_Z and e, plus positivity diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed

from .dataset import FusedDataset
from .estimands import DecomposableEstimand, IdentifiableTarget
from .folds import FoldAssignment
from .learners import (
    KnownPropensity,
    LogisticPropensityLearner,
    LogNormalMomentLearner,
    MomentFit,
    MomentLearner,
    PropensityFit,
    PropensityLearner,
    RidgeMomentLearner,
    VarianceMode,
)
from .utils import (
    BoolArray,
    EmptyArmError,
    FloatArray,
    InputValidationError,
    IntArray,
    ScalarEstimandRequiredError,
    derive_seed,
    logger,
)


# Effective propensity floor when clipping is disabled; keeps 1/e finite.
MIN_PROPENSITY = 1e-12
WARN_FRACTION = 0.01
QUANTILES = (0.01, 0.05, 0.25, 0.5)

type MomentModel = Literal["auto", "ridge", "lognormal"]
type PropensityFn = Callable[[FloatArray], npt.ArrayLike]


@dataclass(frozen=True)
class LearnerConfig:
    """Settings of the built-in learners.

    ``moment_model="auto"`` means ridge, except where a simulation design
    supplies its own correctly specified model.
    """

    lambda_grid: Optional[Tuple[float, ...]] = None
    cv_folds: int = 5
    variance_mode: VarianceMode = "homoskedastic"
    moment_model: MomentModel = "auto"
    logistic_max_iter: int = 100
    logistic_tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.cv_folds < 2:
            raise InputValidationError(f"cv_folds must be >= 2, got {self.cv_folds}")
        if self.variance_mode not in ("homoskedastic", "regression"):
            raise InputValidationError(f"unknown variance mode `{self.variance_mode}`")
        if self.moment_model not in ("auto", "ridge", "lognormal"):
            raise InputValidationError(f"unknown moment model `{self.moment_model}`")


@dataclass(frozen=True)
class NuisanceConfig:
    """How the five nuisance functions are fitted and safeguarded.

    Args:
        learner: settings of the built-in learners.
        relative_variance_floor: v_Y, v_Z are floored at this multiple of the
            pooled target's sample variance.
        propensity_clip: when set, e is clipped to [clip, 1 - clip].
        known_propensity: analytic e(x), bypasses propensity estimation.
        moment_learner_y, moment_learner_z, propensity_learner: custom learners
            replacing the built-ins.
        threads: worker threads for the per-fold fits.
    """

    learner: LearnerConfig = field(default_factory=LearnerConfig)
    relative_variance_floor: float = 1e-8
    propensity_clip: Optional[float] = None
    known_propensity: Optional[PropensityFn] = field(default=None, compare=False)
    moment_learner_y: Optional[MomentLearner] = field(default=None, compare=False)
    moment_learner_z: Optional[MomentLearner] = field(default=None, compare=False)
    propensity_learner: Optional[PropensityLearner] = field(default=None, compare=False)
    threads: int = 1

    def __post_init__(self) -> None:
        if self.relative_variance_floor < 0:
            raise InputValidationError(
                "relative_variance_floor must be >= 0, "
                f"got {self.relative_variance_floor}"
            )
        if self.propensity_clip is not None and not 0.0 < self.propensity_clip < 0.5:
            raise InputValidationError(
                f"propensity_clip must lie in (0, 0.5), got {self.propensity_clip}"
            )

    @property
    def e_floor(self) -> float:
        if self.propensity_clip is None:
            return MIN_PROPENSITY
        return self.propensity_clip

    def moment_learner(
        self, arm: Literal["y", "z"], variance_floor: float
    ) -> MomentLearner:
        custom = self.moment_learner_y if arm == "y" else self.moment_learner_z
        if custom is not None:
            return custom
        if self.learner.moment_model == "lognormal":
            return LogNormalMomentLearner(
                lambda_grid=self.learner.lambda_grid, cv_folds=self.learner.cv_folds
            )
        return RidgeMomentLearner(
            lambda_grid=self.learner.lambda_grid,
            cv_folds=self.learner.cv_folds,
            variance_mode=self.learner.variance_mode,
            variance_floor=variance_floor,
        )

    def mean_learner(self, arm: Literal["y", "z"]) -> MomentLearner:
        """Learner for identifiable arm moments; only its mean is used."""
        custom = self.moment_learner_y if arm == "y" else self.moment_learner_z
        if custom is not None:
            return custom
        return RidgeMomentLearner(
            lambda_grid=self.learner.lambda_grid, cv_folds=self.learner.cv_folds
        )

    def propensity(self) -> PropensityLearner:
        if self.known_propensity is not None:
            return KnownPropensity(fn=self.known_propensity)
        if self.propensity_learner is not None:
            return self.propensity_learner
        return LogisticPropensityLearner(
            lambda_grid=self.learner.lambda_grid,
            cv_folds=self.learner.cv_folds,
            max_iter=self.learner.logistic_max_iter,
            tol=self.learner.logistic_tol,
        )


@dataclass(frozen=True)
class MomentEstimates:
    """Out-of-fold nuisance values, one entry per observation."""

    m_y: FloatArray
    m_z: FloatArray
    v_y: FloatArray
    v_z: FloatArray
    e: FloatArray
    floored_y: BoolArray
    floored_z: BoolArray
    clipped: BoolArray
    variance_floor: float = 0.0
    e_floor: float = 0.0

    @classmethod
    def from_values(
        cls,
        m_y: npt.ArrayLike,
        m_z: npt.ArrayLike,
        v_y: npt.ArrayLike,
        v_z: npt.ArrayLike,
        e: npt.ArrayLike,
        *,
        variance_floor: float = 0.0,
        e_floor: float = 0.0,
    ) -> MomentEstimates:
        """Applies the floors to raw values and records which rows were touched."""
        arrays = [
            np.atleast_1d(np.asarray(a, dtype=np.float64))
            for a in (m_y, m_z, v_y, v_z, e)
        ]
        n = max(a.shape[0] for a in arrays)
        m_y_arr, m_z_arr, v_y_arr, v_z_arr, e_arr = (
            np.broadcast_to(a, (n,)).copy() for a in arrays
        )
        floored_y = v_y_arr < variance_floor
        floored_z = v_z_arr < variance_floor
        clipped = (e_arr < e_floor) | (e_arr > 1.0 - e_floor)
        return cls(
            m_y=m_y_arr,
            m_z=m_z_arr,
            v_y=np.maximum(v_y_arr, variance_floor),
            v_z=np.maximum(v_z_arr, variance_floor),
            e=np.clip(e_arr, e_floor, 1.0 - e_floor),
            floored_y=floored_y,
            floored_z=floored_z,
            clipped=clipped,
            variance_floor=variance_floor,
            e_floor=e_floor,
        )

    @property
    def n(self) -> int:
        return int(self.m_y.shape[0])

    def take(self, rows: IntArray) -> MomentEstimates:
        return MomentEstimates(
            m_y=self.m_y[rows],
            m_z=self.m_z[rows],
            v_y=self.v_y[rows],
            v_z=self.v_z[rows],
            e=self.e[rows],
            floored_y=self.floored_y[rows],
            floored_z=self.floored_z[rows],
            clipped=self.clipped[rows],
            variance_floor=self.variance_floor,
            e_floor=self.e_floor,
        )


@dataclass(frozen=True)
class FoldNuisance:
    """Models trained without fold ``fold``."""

    fold: int
    train_rows: IntArray
    propensity: PropensityFit
    moment_y: MomentFit
    moment_z: MomentFit

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "fold": self.fold,
            "train_size": int(self.train_rows.shape[0]),
            "propensity": self.propensity.diagnostics(),
            "moment_y": self.moment_y.diagnostics(),
            "moment_z": self.moment_z.diagnostics(),
        }


@dataclass(frozen=True)
class NuisanceFit:
    folds: FoldAssignment
    fold_models: Tuple[FoldNuisance, ...]
    variance_floor: float
    e_floor: float

    def diagnostics(self) -> List[Dict[str, Any]]:
        return [model.diagnostics() for model in self.fold_models]

    def flags(self) -> List[str]:
        out: List[str] = []
        for model in self.fold_models:
            if model.propensity.diagnostics().get("converged") is False:
                out.append("DidNotConverge")
        return out


def arm_values(
    data: FusedDataset, estimand: DecomposableEstimand
) -> Tuple[FloatArray, FloatArray]:
    """f(y, x) on r=1 rows and g(z, x) on r=0 rows, zero elsewhere; scalar f only."""
    if estimand.p_f != 1:
        raise ScalarEstimandRequiredError(
            f"estimand {estimand.name} has p_f={estimand.p_f}, expected 1"
        )
    f_vals = np.zeros(data.n)
    g_vals = np.zeros(data.n)
    y_rows, z_rows = data.y_rows, data.z_rows
    f_vals[y_rows] = estimand.f(data.y[y_rows], data.x[y_rows])[:, 0]
    g_vals[z_rows] = estimand.g(data.z[z_rows], data.x[z_rows])[:, 0]
    return f_vals, g_vals


def pooled_variance_floor(
    f_vals: FloatArray, g_vals: FloatArray, r: IntArray, relative: float
) -> float:
    """``relative`` times the variance of f on r=1 rows pooled with g on r=0 rows."""
    pooled = np.concatenate([f_vals[r == 1], g_vals[r == 0]])
    scale = float(np.var(pooled, ddof=1)) if pooled.size > 1 else 0.0
    return relative * scale if scale > 0 else relative


def _check_training_arms(data: FusedDataset, folds: FoldAssignment) -> None:
    for k in range(folds.k_folds):
        train_r = data.r[folds.train_rows(k)]
        if not (train_r == 1).any() or not (train_r == 0).any():
            raise EmptyArmError(
                f"training rows of fold {k} lack r=1 or r=0 observations"
            )


def _fit_propensity(
    data: FusedDataset, train: IntArray, learner: PropensityLearner, seed: int
) -> PropensityFit:
    return learner.fit(data.x[train], data.r[train].astype(np.float64), seed=seed)


def _fit_fold(
    k: int,
    data: FusedDataset,
    f_vals: FloatArray,
    g_vals: FloatArray,
    folds: FoldAssignment,
    config: NuisanceConfig,
    variance_floor: float,
    seed: int,
) -> FoldNuisance:
    train = folds.train_rows(k)
    train_y = train[data.r[train] == 1]
    train_z = train[data.r[train] == 0]
    logger.debug(
        "fold %d: fitting on %d rows (%d with y, %d with z)",
        k,
        train.size,
        train_y.size,
        train_z.size,
    )
    propensity = _fit_propensity(
        data, train, config.propensity(), derive_seed(seed, k, 0)
    )
    moment_y = config.moment_learner("y", variance_floor).fit(
        data.x[train_y], f_vals[train_y], seed=derive_seed(seed, k, 1)
    )
    moment_z = config.moment_learner("z", variance_floor).fit(
        data.x[train_z], g_vals[train_z], seed=derive_seed(seed, k, 2)
    )
    return FoldNuisance(
        fold=k,
        train_rows=train,
        propensity=propensity,
        moment_y=moment_y,
        moment_z=moment_z,
    )


def estimate_nuisances(
    data: FusedDataset,
    estimand: DecomposableEstimand,
    folds: FoldAssignment,
    config: NuisanceConfig,
    seed: int,
) -> Tuple[NuisanceFit, MomentEstimates]:
    """Fits each fold's nuisance models on the other folds and evaluates them on it."""
    if folds.n != data.n:
        raise InputValidationError(
            f"fold assignment covers {folds.n} rows but the dataset has {data.n}"
        )
    f_vals, g_vals = arm_values(data, estimand)
    _check_training_arms(data, folds)
    variance_floor = pooled_variance_floor(
        f_vals, g_vals, data.r, config.relative_variance_floor
    )

    logger.info("fitting nuisances on %d folds (n=%d)", folds.k_folds, data.n)
    fold_models = Parallel(n_jobs=config.threads, backend="threading")(
        delayed(_fit_fold)(k, data, f_vals, g_vals, folds, config, variance_floor, seed)
        for k in range(folds.k_folds)
    )

    raw = np.zeros((5, data.n))
    for model in fold_models:
        rows = folds.test_rows(model.fold)
        x_test = data.x[rows]
        raw[0, rows] = model.moment_y.mean(x_test)
        raw[1, rows] = model.moment_z.mean(x_test)
        raw[2, rows] = model.moment_y.variance(x_test)
        raw[3, rows] = model.moment_z.variance(x_test)
        raw[4, rows] = model.propensity.predict(x_test)

    moments = MomentEstimates.from_values(
        *raw, variance_floor=variance_floor, e_floor=config.e_floor
    )
    # RidgeMomentLearner already floors its predictions; count rows at the floor too
    at_floor_y = moments.floored_y | (raw[2] <= variance_floor)
    at_floor_z = moments.floored_z | (raw[3] <= variance_floor)
    moments = MomentEstimates(
        m_y=moments.m_y,
        m_z=moments.m_z,
        v_y=moments.v_y,
        v_z=moments.v_z,
        e=moments.e,
        floored_y=at_floor_y,
        floored_z=at_floor_z,
        clipped=moments.clipped,
        variance_floor=variance_floor,
        e_floor=config.e_floor,
    )
    fit = NuisanceFit(
        folds=folds,
        fold_models=tuple(fold_models),
        variance_floor=variance_floor,
        e_floor=config.e_floor,
    )
    return fit, moments


@dataclass(frozen=True)
class ArmMeanEstimates:
    """Out-of-fold regression of an identifiable target on x, plus its e-hat."""

    values: FloatArray
    m_hat: FloatArray
    e: FloatArray
    clipped: BoolArray
    folds: FoldAssignment


def cross_fit_propensity(
    data: FusedDataset,
    folds: FoldAssignment,
    config: NuisanceConfig,
    seed: int,
) -> Tuple[FloatArray, BoolArray]:
    """Out-of-fold e-hat, clipped to [e_floor, 1 - e_floor], and the clipped-row mask.

    Uses the same derived seeds as ``estimate_nuisances``, so both see one
    e-hat per fold.
    """
    _check_training_arms(data, folds)
    learner = config.propensity()
    e = np.zeros(data.n)
    for k in range(folds.k_folds):
        test = folds.test_rows(k)
        fit = _fit_propensity(
            data, folds.train_rows(k), learner, derive_seed(seed, k, 0)
        )
        e[test] = fit.predict(data.x[test])
    e_floor = config.e_floor
    clipped = (e < e_floor) | (e > 1.0 - e_floor)
    return np.clip(e, e_floor, 1.0 - e_floor), clipped


def estimate_arm_means(
    data: FusedDataset,
    target: IdentifiableTarget,
    folds: FoldAssignment,
    config: NuisanceConfig,
    seed: int,
    *,
    propensity: Optional[Tuple[FloatArray, BoolArray]] = None,
) -> ArmMeanEstimates:
    """Cross-fits E[t | x] on the target's arm and e(x) for an AIPW estimate of E[t].

    ``propensity`` takes the output of ``cross_fit_propensity`` so several
    targets can share one propensity fit.
    """
    if target.arm == "x":
        values = target.evaluate(data.x, data.x)
        return ArmMeanEstimates(
            values=values,
            m_hat=values.copy(),
            e=np.full(data.n, 0.5),
            clipped=np.zeros(data.n, dtype=bool),
            folds=folds,
        )
    if propensity is None:
        propensity = cross_fit_propensity(data, folds, config, seed)
    e, clipped = propensity
    observed = data.r == (1 if target.arm == "y" else 0)
    source = data.y if target.arm == "y" else data.z
    rows = np.flatnonzero(observed)
    values = np.zeros(data.n)
    values[rows] = target.evaluate(source[rows], data.x[rows])

    learner = config.mean_learner(target.arm)
    m_hat = np.zeros(data.n)
    for k in range(folds.k_folds):
        train = folds.train_rows(k)
        test = folds.test_rows(k)
        train_arm = train[observed[train]]
        fit = learner.fit(
            data.x[train_arm], values[train_arm], seed=derive_seed(seed, k, 3)
        )
        m_hat[test] = fit.mean(data.x[test])
    return ArmMeanEstimates(
        values=values, m_hat=m_hat, e=e, clipped=clipped, folds=folds
    )


@dataclass(frozen=True)
class PositivityReport:
    """Summary of how close the fitted nuisances come to violating positivity."""

    n: int
    e_min: float
    e_quantiles: Dict[str, float]
    one_minus_e_min: float
    one_minus_e_quantiles: Dict[str, float]
    v_y_min: float
    v_y_quantiles: Dict[str, float]
    v_z_min: float
    v_z_quantiles: Dict[str, float]
    mean_inv_e4: float
    mean_inv_one_minus_e4: float
    mean_inv_v_y8: float
    mean_inv_v_z8: float
    clipped: int
    floored_y: int
    floored_z: int
    flags: Tuple[str, ...]

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = dict(self.__dict__)
        out["flags"] = list(self.flags)
        return out


def _quantiles(values: FloatArray) -> Dict[str, float]:
    points = np.quantile(values, QUANTILES)
    return {f"q{q:g}": float(v) for q, v in zip(QUANTILES, points)}


def _mean_inverse_power(values: FloatArray, power: int) -> float:
    with np.errstate(divide="ignore", over="ignore"):
        return float(np.mean(np.power(values, -float(power))))


def positivity_report(moments: MomentEstimates) -> PositivityReport:
    n = moments.n
    one_minus_e = 1.0 - moments.e
    clipped = int(moments.clipped.sum())
    floored_y = int(moments.floored_y.sum())
    floored_z = int(moments.floored_z.sum())
    flags: List[str] = []
    if n and clipped / n > WARN_FRACTION:
        logger.warning(
            "PropensityClipping: %d of %d propensities clipped at %g",
            clipped,
            n,
            moments.e_floor,
        )
        flags.append("PropensityClipping")
    if n and (floored_y + floored_z) / n > WARN_FRACTION:
        logger.warning(
            "DegenerateVariance: variance floor %.3e reached on %d (y) and %d (z) "
            "of %d rows",
            moments.variance_floor,
            floored_y,
            floored_z,
            n,
        )
        flags.append("DegenerateVariance")
    return PositivityReport(
        n=n,
        e_min=float(moments.e.min()),
        e_quantiles=_quantiles(moments.e),
        one_minus_e_min=float(one_minus_e.min()),
        one_minus_e_quantiles=_quantiles(one_minus_e),
        v_y_min=float(moments.v_y.min()),
        v_y_quantiles=_quantiles(moments.v_y),
        v_z_min=float(moments.v_z.min()),
        v_z_quantiles=_quantiles(moments.v_z),
        mean_inv_e4=_mean_inverse_power(moments.e, 4),
        mean_inv_one_minus_e4=_mean_inverse_power(one_minus_e, 4),
        mean_inv_v_y8=_mean_inverse_power(moments.v_y, 8),
        mean_inv_v_z8=_mean_inverse_power(moments.v_z, 8),
        clipped=clipped,
        floored_y=floored_y,
        floored_z=floored_z,
        flags=tuple(flags),
    )
