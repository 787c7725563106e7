"""Monte Carlo coverage studies of the cross-fitted bound estimator."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import linregress

from .dgp import DgpSpec, TrueBounds, sample_dgp, true_cs_bounds
from .estimator import InferenceConfig, infer
from .utils import InputValidationError, InvalidSpecError, derive_seed, jsonable, logger

MC_Z = 1.96


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    seed: int
    theta_l_hat: float
    theta_u_hat: float
    v_l_hat: float
    v_u_hat: float
    lcb: float
    ucb: float
    lcb_covered: bool
    ucb_covered: bool
    point_covered: Optional[bool] = None
    flags: Tuple[str, ...] = ()

    @property
    def covered(self) -> bool:
        return self.lcb_covered and self.ucb_covered

    @property
    def width(self) -> float:
        return self.ucb - self.lcb


def _rate_se(rate: float, reps: int) -> float:
    return float(np.sqrt(rate * (1.0 - rate) / reps))


@dataclass(frozen=True)
class CoverageReport:
    """Aggregate of ``reps`` replications judged against the true bounds."""

    spec: Dict[str, Any]
    n: int
    alpha: float
    seed: int
    true_bounds: TrueBounds
    records: Tuple[ReplicationRecord, ...]
    true_theta: Optional[float] = None

    @property
    def reps(self) -> int:
        return len(self.records)

    @property
    def coverage(self) -> float:
        return float(np.mean([rec.covered for rec in self.records]))

    @property
    def lcb_coverage(self) -> float:
        return float(np.mean([rec.lcb_covered for rec in self.records]))

    @property
    def ucb_coverage(self) -> float:
        return float(np.mean([rec.ucb_covered for rec in self.records]))

    @property
    def point_coverage(self) -> Optional[float]:
        if self.true_theta is None:
            return None
        return float(np.mean([bool(rec.point_covered) for rec in self.records]))

    @property
    def coverage_se(self) -> float:
        return _rate_se(self.coverage, self.reps)

    @property
    def widths(self) -> np.ndarray:
        return np.array([rec.width for rec in self.records])

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.widths))

    @property
    def width_se(self) -> float:
        return float(np.std(self.widths, ddof=1) / np.sqrt(self.reps))

    @property
    def mean_v_u_over_n(self) -> float:
        return float(np.mean([rec.v_u_hat for rec in self.records])) / self.n

    @property
    def mc_var_theta_u(self) -> float:
        return float(np.var([rec.theta_u_hat for rec in self.records], ddof=1))

    def summary(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "reps": self.reps,
            "coverage": self.coverage,
            "coverage_se": self.coverage_se,
            "coverage_mc_error": MC_Z * self.coverage_se,
            "lcb_coverage": self.lcb_coverage,
            "lcb_coverage_se": _rate_se(self.lcb_coverage, self.reps),
            "ucb_coverage": self.ucb_coverage,
            "ucb_coverage_se": _rate_se(self.ucb_coverage, self.reps),
            "mean_width": self.mean_width,
            "width_se": self.width_se,
            "width_mc_error": MC_Z * self.width_se,
            "mean_v_u_over_n": self.mean_v_u_over_n,
            "mc_var_theta_u": self.mc_var_theta_u,
        }
        if self.true_theta is not None:
            out["true_theta"] = self.true_theta
            out["point_coverage"] = self.point_coverage
        return out

    def to_dict(self, *, per_rep: bool = True) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "spec": self.spec,
            "n": self.n,
            "alpha": self.alpha,
            "seed": self.seed,
            "true_bounds": {
                "theta_l": self.true_bounds.theta_l,
                "theta_u": self.true_bounds.theta_u,
                "standard_error": self.true_bounds.standard_error,
                "method": self.true_bounds.method,
            },
            **self.summary(),
        }
        if per_rep:
            out["replications"] = [
                {
                    "index": rec.index,
                    "seed": rec.seed,
                    "theta_l_hat": rec.theta_l_hat,
                    "theta_u_hat": rec.theta_u_hat,
                    "v_l_hat": rec.v_l_hat,
                    "v_u_hat": rec.v_u_hat,
                    "lcb": rec.lcb,
                    "ucb": rec.ucb,
                    "covered": rec.covered,
                    "point_covered": rec.point_covered,
                    "flags": list(rec.flags),
                }
                for rec in self.records
            ]
        return jsonable(out)  # type: ignore[no-any-return]


def replication_config(
    spec: DgpSpec, config: InferenceConfig, *, known_propensity: bool
) -> InferenceConfig:
    """Resolves the ``auto`` moment model and the known-propensity toggle."""
    nuisance = config.nuisance
    if nuisance.learner.moment_model == "auto":
        learner = replace(nuisance.learner, moment_model=spec.moment_model)
        nuisance = replace(nuisance, learner=learner)
    if known_propensity:
        nuisance = replace(nuisance, known_propensity=spec.propensity)
    # replications are the unit of parallelism
    return replace(config, nuisance=replace(nuisance, threads=1))


def _replicate(
    spec: DgpSpec,
    n: int,
    index: int,
    seed: int,
    config: InferenceConfig,
    bounds: TrueBounds,
    theta: Optional[float],
) -> ReplicationRecord:
    sample = sample_dgp(spec, n, derive_seed(seed, index, 0))
    run_config = replace(config, seed=derive_seed(seed, index, 1))
    result = infer(sample.data, spec.estimand(), run_config)
    return ReplicationRecord(
        index=index,
        seed=run_config.seed,
        theta_l_hat=result.theta_l_hat,
        theta_u_hat=result.theta_u_hat,
        v_l_hat=result.v_l_hat,
        v_u_hat=result.v_u_hat,
        lcb=result.lcb,
        ucb=result.ucb,
        lcb_covered=result.lcb <= bounds.theta_l,
        ucb_covered=result.ucb >= bounds.theta_u,
        point_covered=None if theta is None else result.lcb <= theta <= result.ucb,
        flags=result.flags,
    )


def run_monte_carlo(
    spec: DgpSpec,
    n: int,
    reps: int,
    config: InferenceConfig,
    alpha: Optional[float] = None,
    seed: int = 0,
    threads: int = 1,
    *,
    known_propensity: bool = False,
    bounds: Optional[TrueBounds] = None,
) -> CoverageReport:
    """Runs ``reps`` seeded replications; the report does not depend on ``threads``.

    Replication j samples with ``derive_seed(seed, j, 0)`` and cross-fits with
    ``derive_seed(seed, j, 1)``.
    """
    if reps < 2:
        raise InputValidationError(f"reps must be >= 2, got {reps}")
    if alpha is not None:
        config = replace(config, alpha=alpha)
    config = replication_config(spec, config, known_propensity=known_propensity)
    bounds = bounds if bounds is not None else true_cs_bounds(spec)
    theta = spec.true_theta()
    logger.info(
        "running %d replications of %s at n=%d on %d threads",
        reps,
        spec.name,
        n,
        threads,
    )
    records = Parallel(n_jobs=threads, backend="threading")(
        delayed(_replicate)(spec, n, j, seed, config, bounds, theta)
        for j in range(reps)
    )
    return CoverageReport(
        spec=spec.params(),
        n=n,
        alpha=config.alpha,
        seed=seed,
        true_bounds=bounds,
        records=tuple(records),
        true_theta=theta,
    )


@dataclass(frozen=True)
class SweepReport:
    """One coverage study per value of a design parameter, plus a width-on-value fit."""

    param: str
    values: Tuple[float, ...]
    reports: Tuple[CoverageReport, ...]
    r_squared: Optional[float] = None
    slope: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def table(self) -> List[Dict[str, Any]]:
        return [
            {self.param: value, **report.summary()}
            for value, report in zip(self.values, self.reports)
        ]

    def to_dict(self) -> Dict[str, Any]:
        return jsonable(  # type: ignore[no-any-return]
            {
                "param": self.param,
                "table": self.table(),
                "width_fit": {"r_squared": self.r_squared, "slope": self.slope},
                "settings": [report.to_dict(per_rep=False) for report in self.reports],
                **self.extra,
            }
        )


def run_sweep(
    spec: DgpSpec,
    param: str,
    values: Sequence[float],
    n: int,
    reps: int,
    config: InferenceConfig,
    seed: int = 0,
    threads: int = 1,
    *,
    known_propensity: bool = False,
) -> SweepReport:
    """Repeats ``run_monte_carlo`` with ``param`` set to each value.

    Setting i uses ``derive_seed(seed, i)``.
    """
    if not values:
        raise InvalidSpecError("sweep needs at least one value")
    reports: List[CoverageReport] = []
    for i, value in enumerate(values):
        try:
            setting = replace(spec, **{param: value})  # type: ignore[type-var]
        except TypeError as error:
            raise InvalidSpecError(f"{spec.name} has no parameter `{param}`") from error
        reports.append(
            run_monte_carlo(
                setting,
                n,
                reps,
                config,
                seed=derive_seed(seed, i),
                threads=threads,
                known_propensity=known_propensity,
            )
        )
    r_squared: Optional[float] = None
    slope: Optional[float] = None
    if len(values) >= 3:
        widths = [report.mean_width for report in reports]
        fit = linregress(np.asarray(values, dtype=np.float64), widths)
        r_squared = float(fit.rvalue**2)
        slope = float(fit.slope)
    return SweepReport(
        param=param,
        values=tuple(float(v) for v in values),
        reports=tuple(reports),
        r_squared=r_squared,
        slope=slope,
    )
