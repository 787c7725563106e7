"""Operator configuration: defaults, an optional TOML file and command-line flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from tomllib import TOMLDecodeError
from tomllib import load as toml_load
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np

from .dgp import DgpSpec, make_dgp
from .estimands import DecomposableEstimand, make_estimand
from .estimator import InferenceConfig
from .learners import KnownPropensity
from .nuisance import LearnerConfig, NuisanceConfig
from .utils import UsageError, derive_seed

type Target = Literal["bounds", "ols", "difference-variance"]

TOOL_TABLE = "fusion-bounds"
# fields which never change a report and are kept out of its config echo
_UNECHOED = ("threads", "out", "config")


@dataclass(frozen=True)
class RunConfig:
    """Every knob of the analyze, simulate and oracle-check commands."""

    config: Optional[str] = None
    out: Optional[str] = None
    threads: Optional[int] = None
    seed: int = 0
    alpha: float = 0.05

    # analyze
    data: Optional[str] = None
    target: Target = "bounds"
    estimand: str = "product"
    estimand_params: Dict[str, Any] = field(default_factory=dict)
    k_folds: int = 2
    lambda_grid: Optional[Tuple[float, ...]] = None
    cv_folds: int = 5
    variance_mode: Literal["homoskedastic", "regression"] = "homoskedastic"
    moment_model: Literal["auto", "ridge", "lognormal"] = "auto"
    relative_variance_floor: float = 1e-8
    clip_propensity: Optional[float] = None
    known_propensity: Optional[float] = None

    # simulate
    dgp: str = "heavy-tail-linear"
    dgp_params: Dict[str, Any] = field(default_factory=dict)
    n: int = 1000
    reps: int = 500
    sweep: Optional[Tuple[str, Tuple[float, ...]]] = None
    true_propensity: bool = False

    # oracle-check
    instances: int = 200
    location_scale: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise UsageError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.k_folds < 2:
            raise UsageError(f"k_folds must be >= 2, got {self.k_folds}")
        if self.threads is not None and self.threads < 1:
            raise UsageError(f"threads must be >= 1, got {self.threads}")
        if self.target not in ("bounds", "ols", "difference-variance"):
            raise UsageError(f"unknown target `{self.target}`")

    @classmethod
    def from_sources(cls, flags: Mapping[str, Any]) -> RunConfig:
        """Defaults < TOML file named by ``flags["config"]`` < other non-None flags."""
        values: Dict[str, Any] = {}
        path = flags.get("config")
        if path is not None:
            values.update(load_toml(path))
            values["config"] = path
        values.update({key: value for key, value in flags.items() if value is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown configuration keys {unknown}")
        coerced = dict(values)
        if coerced.get("lambda_grid") is not None:
            coerced["lambda_grid"] = tuple(float(v) for v in coerced["lambda_grid"])
        if coerced.get("sweep") is not None:
            coerced["sweep"] = _coerce_sweep(coerced["sweep"])
        try:
            return cls(**coerced)
        except TypeError as error:
            raise UsageError(f"bad configuration: {error}") from error

    def echo(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        for key in _UNECHOED:
            out.pop(key)
        if self.sweep is not None:
            out["sweep"] = {"param": self.sweep[0], "values": list(self.sweep[1])}
        return out

    def seeds(self) -> Dict[str, int]:
        return {
            "seed": self.seed,
            "fold_seed": derive_seed(self.seed, 0),
            "nuisance_seed": derive_seed(self.seed, 1),
        }

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(
            lambda_grid=self.lambda_grid,
            cv_folds=self.cv_folds,
            variance_mode=self.variance_mode,
            moment_model=self.moment_model,
        )

    def inference_config(self, threads: int = 1) -> InferenceConfig:
        known = None
        if self.known_propensity is not None:
            known = KnownPropensity.constant(self.known_propensity).fn
        nuisance = NuisanceConfig(
            learner=self.learner_config(),
            relative_variance_floor=self.relative_variance_floor,
            propensity_clip=self.clip_propensity,
            known_propensity=known,
            threads=threads,
        )
        return InferenceConfig(
            k_folds=self.k_folds, alpha=self.alpha, seed=self.seed, nuisance=nuisance
        )

    def make_estimand(self) -> DecomposableEstimand:
        return make_estimand(self.estimand, **self.estimand_params)

    def make_dgp(self) -> DgpSpec:
        return make_dgp(self.dgp, **self.dgp_params)


def _normalize(table: Mapping[str, Any]) -> Dict[str, Any]:
    return {key.replace("-", "_"): value for key, value in table.items()}


def load_toml(path: str | os.PathLike[str]) -> Dict[str, Any]:
    """Reads a ``[tool.fusion-bounds]`` table if present, else the top-level keys."""
    try:
        with open(path, "rb") as f:
            doc = toml_load(f)
    except FileNotFoundError:
        raise UsageError(f"config file `{path}` does not exist") from None
    except TOMLDecodeError as error:
        raise UsageError(f"config file `{path}` is not valid TOML: {error}") from error

    table = doc.get("tool", {}).get(TOOL_TABLE)
    if table is None:
        table = {key: value for key, value in doc.items() if key != "tool"}
    return _normalize(table)


def _coerce_sweep(value: Any) -> Tuple[str, Tuple[float, ...]]:
    if isinstance(value, Mapping):
        return str(value["param"]), tuple(float(v) for v in value["values"])
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return str(value[0]), tuple(float(v) for v in value[1])
    return parse_sweep(str(value))


def parse_sweep(text: str) -> Tuple[str, Tuple[float, ...]]:
    """``"sigma_y=0.2,0.4,0.8"`` -> ``("sigma_y", (0.2, 0.4, 0.8))``."""
    param, sep, raw = text.partition("=")
    if not sep or not param.strip():
        raise UsageError(f"expected PARAM=V1,V2,... for sweep, got `{text}`")
    try:
        values = tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError as error:
        raise UsageError(f"sweep values must be numbers, got `{raw}`") from error
    if not values:
        raise UsageError(f"sweep `{param}` has no values")
    return param.strip().replace("-", "_"), values


def parse_params(items: Optional[List[str]]) -> Dict[str, Any]:
    """``["rho=0.6", "sigma=1"]`` -> ``{"rho": 0.6, "sigma": 1}``.

    Comma-separated values become float lists.
    """
    params: Dict[str, Any] = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"expected KEY=VALUE, got `{item}`")
        try:
            parsed = [float(v) for v in raw.split(",")]
        except ValueError as error:
            raise UsageError(
                f"parameter `{key}` must be numeric, got `{raw}`"
            ) from error
        value = parsed if "," in raw else _scalar(parsed[0])
        params[key.strip().replace("-", "_")] = value
    return params


def _scalar(value: float) -> Any:
    return int(value) if float(value).is_integer() and np.abs(value) < 2**53 else value


def parse_lambda_grid(text: str) -> Tuple[float, ...]:
    try:
        grid = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as error:
        raise UsageError(
            f"lambda grid must be comma-separated numbers, got `{text}`"
        ) from error
    if not grid:
        raise UsageError("lambda grid is empty")
    return grid


