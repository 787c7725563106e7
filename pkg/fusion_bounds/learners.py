"""Built-in regression learners for the conditional moments and the propensity score."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Literal, Optional, Protocol, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy import linalg
from scipy.special import expit

from .folds import kfold_split
from .utils import (
    BoolArray,
    DegenerateDesignError,
    EmptyInputError,
    FloatArray,
    InputValidationError,
    NonFiniteTargetError,
    SingleClassError,
    SupportError,
    as_2d,
    derive_seed,
    logger,
)

type VarianceMode = Literal["homoskedastic", "regression"]
type FeatureMap = Callable[[FloatArray], FloatArray]

DEFAULT_GRID_POINTS = 20


def default_lambda_grid(n: int, p: int) -> Tuple[float, ...]:
    """20 log-spaced penalties in [1e-4, 1e4], scaled by n * p."""
    scale = float(max(n, 1) * max(p, 1))
    return tuple(float(v) for v in np.logspace(-4, 4, DEFAULT_GRID_POINTS) * scale)


def _grid_for(
    lambda_grid: Optional[Tuple[float, ...]], xs: FloatArray
) -> Tuple[float, ...]:
    return lambda_grid if lambda_grid is not None else default_lambda_grid(*xs.shape)


@dataclass(frozen=True)
class _Standardizer:
    center: FloatArray
    scale: FloatArray
    keep: BoolArray

    @classmethod
    def fit(cls, xs: FloatArray) -> _Standardizer:
        center = xs.mean(axis=0)
        scale = xs.std(axis=0)
        keep = scale > 1e-12 * np.maximum(1.0, np.abs(center))
        return cls(center=center, scale=scale, keep=keep)

    def transform(self, xs: FloatArray) -> FloatArray:
        return (xs[:, self.keep] - self.center[self.keep]) / self.scale[self.keep]

    def unstandardize(
        self, intercept: float, std_coef: FloatArray
    ) -> Tuple[float, FloatArray]:
        coef = np.zeros(self.center.shape[0])
        coef[self.keep] = std_coef / self.scale[self.keep]
        return intercept - float(coef @ self.center), coef


def _check_design(
    xs: npt.ArrayLike, targets: npt.ArrayLike
) -> Tuple[FloatArray, FloatArray]:
    x_arr = as_2d(xs, name="xs")
    t_arr = np.asarray(targets, dtype=np.float64).ravel()
    rows = x_arr.shape[0]
    if rows != t_arr.shape[0]:
        raise DegenerateDesignError(
            f"xs has {rows} rows but targets has {t_arr.shape[0]} entries"
        )
    if rows < 2:
        raise DegenerateDesignError(f"need at least 2 rows to fit, got {rows}")
    if not np.all(np.isfinite(t_arr)):
        raise NonFiniteTargetError("targets contain non-finite values")
    if not np.all(np.isfinite(x_arr)):
        raise DegenerateDesignError("xs contains non-finite values")
    return x_arr, t_arr


def _check_grid(lambda_grid: Sequence[float]) -> FloatArray:
    grid = np.unique(np.asarray(lambda_grid, dtype=np.float64))
    if grid.size == 0:
        raise InputValidationError("lambda grid is empty")
    if np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise InputValidationError(
            f"lambda grid entries must be finite and >= 0, got {grid.tolist()}"
        )
    return grid


@dataclass(frozen=True)
class LinearModel:
    """Ridge fit ``intercept + xs @ coef``.

    ``standardized_coef`` holds the coefficients on the standardized columns.
    """

    intercept: float
    coef: FloatArray
    standardized_coef: FloatArray
    lam: float
    cv_loss: Optional[float] = None
    cv_losses: Tuple[float, ...] = ()

    def predict(self, xs: npt.ArrayLike) -> FloatArray:
        return self.intercept + as_2d(xs, name="xs") @ self.coef

    def diagnostics(self) -> Dict[str, Any]:
        return {"lambda": self.lam, "cv_loss": self.cv_loss}


def _ridge_solve(xt: FloatArray, yt: FloatArray, lam: float) -> FloatArray:
    if xt.shape[1] == 0:
        return np.zeros(0)
    gram = xt.T @ xt + lam * np.eye(xt.shape[1])
    rhs = xt.T @ yt
    try:
        return np.asarray(linalg.solve(gram, rhs, assume_a="sym"))
    except (linalg.LinAlgError, ValueError):
        logger.debug(
            "ridge normal equations singular at lambda=%g, using least squares", lam
        )
        return np.asarray(np.linalg.lstsq(gram, rhs, rcond=None)[0])


def fit_ridge(xs: npt.ArrayLike, targets: npt.ArrayLike, lam: float) -> LinearModel:
    """Closed-form ridge on standardized columns with an unpenalized intercept."""
    x_arr, t_arr = _check_design(xs, targets)
    std = _Standardizer.fit(x_arr)
    mean = float(t_arr.mean())
    std_coef = _ridge_solve(std.transform(x_arr), t_arr - mean, lam)
    intercept, coef = std.unstandardize(mean, std_coef)
    return LinearModel(
        intercept=intercept, coef=coef, standardized_coef=std_coef, lam=float(lam)
    )


def fit_ridge_cv(
    xs: npt.ArrayLike,
    targets: npt.ArrayLike,
    lambda_grid: Sequence[float],
    cv_folds: int = 5,
    seed: int = 0,
) -> LinearModel:
    """Selects lambda by K-fold MSE (ties go to the smallest) and refits on all rows."""
    x_arr, t_arr = _check_design(xs, targets)
    grid = _check_grid(lambda_grid)
    n = x_arr.shape[0]
    folds = kfold_split(n, min(max(cv_folds, 2), n), seed)

    sse = np.zeros(grid.size)
    for k in range(folds.k_folds):
        train, test = folds.train_rows(k), folds.test_rows(k)
        std = _Standardizer.fit(x_arr[train])
        mean = t_arr[train].mean()
        xt = std.transform(x_arr[train])
        x_test = std.transform(x_arr[test])
        if xt.shape[1] == 0:
            sse += np.sum((t_arr[test] - mean) ** 2)
            continue
        u, s, vt = np.linalg.svd(xt, full_matrices=False)
        uty = u.T @ (t_arr[train] - mean)
        x_test_v = x_test @ vt.T
        for j, lam in enumerate(grid):
            denom = s**2 + lam
            shrink = np.divide(s, denom, out=np.zeros_like(s), where=denom > 0)
            pred = mean + x_test_v @ (shrink * uty)
            sse[j] += np.sum((t_arr[test] - pred) ** 2)

    losses = sse / n
    best = int(np.argmin(losses))
    logger.debug(
        "ridge cv selected lambda=%g (mse=%.6g) from %d candidates",
        grid[best],
        losses[best],
        grid.size,
    )
    model = fit_ridge(x_arr, t_arr, float(grid[best]))
    return LinearModel(
        intercept=model.intercept,
        coef=model.coef,
        standardized_coef=model.standardized_coef,
        lam=model.lam,
        cv_loss=float(losses[best]),
        cv_losses=tuple(float(v) for v in losses),
    )


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coef: FloatArray
    standardized_coef: FloatArray
    lam: float
    converged: bool
    iterations: int
    gradient_norm: float
    cv_loss: Optional[float] = None

    def predict(self, xs: npt.ArrayLike) -> FloatArray:
        return np.asarray(expit(self.intercept + as_2d(xs, name="xs") @ self.coef))

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "lambda": self.lam,
            "cv_loss": self.cv_loss,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
        }


def _check_labels(labels: npt.ArrayLike, n: int) -> FloatArray:
    lab = np.asarray(labels, dtype=np.float64).ravel()
    if lab.shape[0] != n:
        raise DegenerateDesignError(
            f"xs has {n} rows but labels has {lab.shape[0]} entries"
        )
    if not np.all(np.isin(lab, (0.0, 1.0))):
        raise InputValidationError("labels must be 0 or 1")
    if lab.min() == lab.max():
        raise SingleClassError(f"labels contain a single class ({int(lab[0])})")
    return lab


def fit_logistic_ridge(
    xs: npt.ArrayLike,
    labels: npt.ArrayLike,
    lam: float,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> LogisticModel:
    """Ridge-penalized logistic regression by damped Newton steps.

    Columns are standardized and the intercept is unpenalized. When ``max_iter``
    is reached the best iterate is returned with ``converged=False``.
    """
    x_arr = as_2d(xs, name="xs")
    lab = _check_labels(labels, x_arr.shape[0])
    if lam < 0:
        raise InputValidationError(f"lambda must be >= 0, got {lam}")

    std = _Standardizer.fit(x_arr)
    design = np.column_stack([np.ones(x_arr.shape[0]), std.transform(x_arr)])
    penalty = np.full(design.shape[1], float(lam))
    penalty[0] = 0.0

    def objective(w: FloatArray) -> float:
        eta = design @ w
        loss = np.sum(np.logaddexp(0.0, eta) - lab * eta)
        return float(loss + 0.5 * np.sum(penalty * w * w))

    def gradient(w: FloatArray) -> FloatArray:
        return np.asarray(design.T @ (expit(design @ w) - lab) + penalty * w)

    mean = lab.mean()
    w = np.zeros(design.shape[1])
    w[0] = np.log(mean / (1.0 - mean))
    current = objective(w)
    grad = gradient(w)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if np.max(np.abs(grad)) <= tol:
            converged = True
            iterations -= 1
            break
        prob = expit(design @ w)
        weighted = design * (prob * (1.0 - prob))[:, None]
        hessian = weighted.T @ design + np.diag(penalty)
        hessian += 1e-12 * np.eye(design.shape[1])
        step = np.linalg.solve(hessian, grad)
        decrease = float(grad @ step)
        t = 1.0
        while t > 1e-10:
            candidate = w - t * step
            value = objective(candidate)
            if value <= current - 1e-4 * t * decrease:
                break
            t *= 0.5
        else:
            logger.debug("logistic line search stalled after %d iterations", iterations)
            break
        w, current = candidate, value
        grad = gradient(w)
    grad_norm = float(np.max(np.abs(grad)))
    converged = converged or grad_norm <= tol

    if not converged:
        logger.warning(
            "DidNotConverge: logistic fit stopped after %d iterations "
            "with gradient norm %.3e",
            iterations,
            grad_norm,
        )
    intercept, coef = std.unstandardize(float(w[0]), w[1:])
    return LogisticModel(
        intercept=intercept,
        coef=coef,
        standardized_coef=w[1:].copy(),
        lam=float(lam),
        converged=converged,
        iterations=iterations,
        gradient_norm=grad_norm,
    )


def _log_loss(labels: FloatArray, prob: FloatArray) -> float:
    prob = np.clip(prob, 1e-15, 1 - 1e-15)
    return float(-np.sum(labels * np.log(prob) + (1.0 - labels) * np.log1p(-prob)))


def fit_logistic_cv(
    xs: npt.ArrayLike,
    labels: npt.ArrayLike,
    lambda_grid: Sequence[float],
    cv_folds: int = 5,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> LogisticModel:
    """Selects the logistic ridge penalty by K-fold log-loss, ties to the smallest."""
    x_arr = as_2d(xs, name="xs")
    lab = _check_labels(labels, x_arr.shape[0])
    grid = _check_grid(lambda_grid)
    n = x_arr.shape[0]
    folds = kfold_split(n, min(max(cv_folds, 2), n), seed)

    losses = np.zeros(grid.size)
    for k in range(folds.k_folds):
        train, test = folds.train_rows(k), folds.test_rows(k)
        train_labels = lab[train]
        for j, lam in enumerate(grid):
            if train_labels.min() == train_labels.max():
                prob = np.full(test.size, train_labels.mean())
            else:
                fit = fit_logistic_ridge(
                    x_arr[train], train_labels, float(lam), max_iter, tol
                )
                prob = fit.predict(x_arr[test])
            losses[j] += _log_loss(lab[test], prob)
    losses /= n
    best = int(np.argmin(losses))
    logger.debug(
        "logistic cv selected lambda=%g (log-loss=%.6g)", grid[best], losses[best]
    )
    model = fit_logistic_ridge(x_arr, lab, float(grid[best]), max_iter, tol)
    return LogisticModel(
        intercept=model.intercept,
        coef=model.coef,
        standardized_coef=model.standardized_coef,
        lam=model.lam,
        converged=model.converged,
        iterations=model.iterations,
        gradient_norm=model.gradient_norm,
        cv_loss=float(losses[best]),
    )


@dataclass(frozen=True)
class VarianceModel:
    """Conditional variance of a residual: a constant or a floored ridge fit."""

    mode: VarianceMode
    floor: float
    constant: Optional[float] = None
    model: Optional[LinearModel] = None

    def predict_with_flags(self, xs: npt.ArrayLike) -> Tuple[FloatArray, BoolArray]:
        rows = as_2d(xs, name="xs").shape[0]
        if self.model is None:
            raw = np.full(rows, float(self.constant or 0.0))
        else:
            raw = self.model.predict(xs)
        floored = raw < self.floor
        return np.where(floored, self.floor, raw), floored

    def predict(self, xs: npt.ArrayLike) -> FloatArray:
        return self.predict_with_flags(xs)[0]

    def diagnostics(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"mode": self.mode, "floor": self.floor}
        if self.constant is not None:
            out["constant"] = self.constant
        if self.model is not None:
            out.update(self.model.diagnostics())
        return out


def fit_conditional_variance(
    xs: npt.ArrayLike,
    residuals_sq: npt.ArrayLike,
    mode: VarianceMode = "homoskedastic",
    *,
    lambda_grid: Optional[Sequence[float]] = None,
    cv_folds: int = 5,
    seed: int = 0,
    floor: float = 0.0,
) -> VarianceModel:
    res = np.asarray(residuals_sq, dtype=np.float64).ravel()
    if res.size == 0:
        raise EmptyInputError("no residuals to fit a conditional variance")
    if np.any(res < 0):
        raise InputValidationError("squared residuals must be non-negative")
    if mode == "homoskedastic":
        return VarianceModel(mode=mode, floor=floor, constant=float(res.mean()))
    if mode == "regression":
        x_arr = as_2d(xs, name="xs")
        model = fit_ridge_cv(x_arr, res, _grid_for(lambda_grid, x_arr), cv_folds, seed)
        return VarianceModel(mode=mode, floor=floor, model=model)
    raise InputValidationError(f"unknown variance mode `{mode}`")


class MomentFit(Protocol):
    def mean(self, xs: FloatArray) -> FloatArray: ...

    def variance(self, xs: FloatArray) -> FloatArray: ...

    def diagnostics(self) -> Dict[str, Any]: ...


class MomentLearner(Protocol):
    """Learns E[t | x] and Var[t | x] for a scalar target t."""

    def fit(self, xs: FloatArray, targets: FloatArray, *, seed: int) -> MomentFit: ...


class PropensityFit(Protocol):
    def predict(self, xs: npt.ArrayLike) -> FloatArray: ...

    def diagnostics(self) -> Dict[str, Any]: ...


class PropensityLearner(Protocol):
    def fit(
        self, xs: FloatArray, labels: FloatArray, *, seed: int
    ) -> PropensityFit: ...


@dataclass(frozen=True)
class RidgeMomentFit:
    mean_model: LinearModel
    variance_model: VarianceModel

    def mean(self, xs: FloatArray) -> FloatArray:
        return self.mean_model.predict(xs)

    def variance(self, xs: FloatArray) -> FloatArray:
        return self.variance_model.predict(xs)

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "mean": self.mean_model.diagnostics(),
            "variance": self.variance_model.diagnostics(),
        }


@dataclass(frozen=True)
class RidgeMomentLearner:
    """Cross-validated ridge mean; variance from its squared in-sample residuals."""

    lambda_grid: Optional[Tuple[float, ...]] = None
    cv_folds: int = 5
    variance_mode: VarianceMode = "homoskedastic"
    variance_floor: float = 0.0

    def fit(self, xs: FloatArray, targets: FloatArray, *, seed: int) -> RidgeMomentFit:
        grid = _grid_for(self.lambda_grid, xs)
        mean_model = fit_ridge_cv(
            xs, targets, grid, self.cv_folds, derive_seed(seed, 0)
        )
        residuals_sq = (targets - mean_model.predict(xs)) ** 2
        variance_model = fit_conditional_variance(
            xs,
            residuals_sq,
            self.variance_mode,
            lambda_grid=self.lambda_grid,
            cv_folds=self.cv_folds,
            seed=derive_seed(seed, 1),
            floor=self.variance_floor,
        )
        return RidgeMomentFit(mean_model=mean_model, variance_model=variance_model)


@dataclass(frozen=True)
class LogNormalMomentFit:
    log_model: LinearModel
    sigma_sq: float
    sign: float = 1.0

    def mean(self, xs: FloatArray) -> FloatArray:
        return self.sign * np.exp(self.log_model.predict(xs) + 0.5 * self.sigma_sq)

    def variance(self, xs: FloatArray) -> FloatArray:
        log_mean = self.log_model.predict(xs)
        return np.exp(2.0 * log_mean + self.sigma_sq) * np.expm1(self.sigma_sq)

    def diagnostics(self) -> Dict[str, Any]:
        return {"log_mean": self.log_model.diagnostics(), "sigma_sq": self.sigma_sq}


@dataclass(frozen=True)
class LogNormalMomentLearner:
    """Gaussian linear model for log|t|; all targets must share one strict sign."""

    lambda_grid: Optional[Tuple[float, ...]] = None
    cv_folds: int = 5

    def fit(
        self, xs: FloatArray, targets: FloatArray, *, seed: int
    ) -> LogNormalMomentFit:
        if np.all(targets > 0):
            sign = 1.0
        elif np.all(targets < 0):
            sign = -1.0
        else:
            raise SupportError("log-normal learner needs targets of one strict sign")
        logs = np.log(sign * targets)
        model = fit_ridge_cv(
            xs, logs, _grid_for(self.lambda_grid, xs), self.cv_folds, seed
        )
        sigma_sq = float(np.mean((logs - model.predict(xs)) ** 2))
        return LogNormalMomentFit(log_model=model, sigma_sq=sigma_sq, sign=sign)


@dataclass(frozen=True)
class LogisticPropensityLearner:
    lambda_grid: Optional[Tuple[float, ...]] = None
    cv_folds: int = 5
    max_iter: int = 100
    tol: float = 1e-8

    def fit(self, xs: FloatArray, labels: FloatArray, *, seed: int) -> LogisticModel:
        grid = _grid_for(self.lambda_grid, xs)
        return fit_logistic_cv(
            xs, labels, grid, self.cv_folds, seed, self.max_iter, self.tol
        )


def quadratic_features(xs: FloatArray) -> FloatArray:
    """x plus its squares and pairwise products."""
    rows, p = xs.shape
    upper = np.triu_indices(p)
    products = (xs[:, :, None] * xs[:, None, :])[:, upper[0], upper[1]]
    return np.hstack([xs, products.reshape(rows, -1)])


@dataclass(frozen=True)
class _FeatureMapFit:
    base: MomentFit
    features: FeatureMap = field(compare=False)

    def mean(self, xs: FloatArray) -> FloatArray:
        return self.base.mean(self.features(xs))

    def variance(self, xs: FloatArray) -> FloatArray:
        return self.base.variance(self.features(xs))

    def diagnostics(self) -> Dict[str, Any]:
        return self.base.diagnostics()


@dataclass(frozen=True)
class FeatureMapLearner:
    """Runs ``base`` on ``features(x)`` instead of x."""

    base: MomentLearner
    features: FeatureMap = field(default=quadratic_features, compare=False)

    def fit(self, xs: FloatArray, targets: FloatArray, *, seed: int) -> _FeatureMapFit:
        base = self.base.fit(self.features(xs), targets, seed=seed)
        return _FeatureMapFit(base=base, features=self.features)


@dataclass(frozen=True)
class _KnownPropensityFit:
    fn: Callable[[FloatArray], npt.ArrayLike]

    def predict(self, xs: npt.ArrayLike) -> FloatArray:
        x_arr = as_2d(xs, name="xs")
        values = np.asarray(self.fn(x_arr), dtype=np.float64)
        return np.broadcast_to(values, (x_arr.shape[0],)).copy()

    def diagnostics(self) -> Dict[str, Any]:
        return {"known": True}


@dataclass(frozen=True)
class KnownPropensity:
    """Bypasses propensity estimation with an analytic e(x)."""

    fn: Callable[[FloatArray], npt.ArrayLike] = field(compare=False)

    @classmethod
    def constant(cls, value: float) -> KnownPropensity:
        if not 0.0 < value < 1.0:
            raise InputValidationError(
                f"known propensity must lie in (0, 1), got {value}"
            )
        return cls(fn=lambda xs: np.full(xs.shape[0], value))

    def fit(
        self, xs: FloatArray, labels: FloatArray, *, seed: int
    ) -> _KnownPropensityFit:
        return _KnownPropensityFit(fn=self.fn)
