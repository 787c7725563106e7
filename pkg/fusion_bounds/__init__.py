from .composition import (
    compose_delta,
    difference_variance_bounds,
    ols_coefficient_bounds,
)
from .dataset import FusedDataset, ingest_csv
from .dgp import (
    GaussianLinear,
    HeavyTailLinear,
    LogNormalRelative,
    ValidationStudy,
    sample_dgp,
    true_cs_bounds,
)
from .estimands import (
    FunctionPair,
    LinearContrast,
    Product,
    Ratio,
    ThresholdProduct,
    make_estimand,
    register_estimand,
)
from .estimator import InferenceConfig, IntervalResult, infer, infer_identifiable
from .nuisance import LearnerConfig, NuisanceConfig
from .oracle import DiscreteConditional, cs_bounds_discrete, tight_bounds_discrete
from .simharness import run_monte_carlo, run_sweep

__all__ = (
    "DiscreteConditional",
    "FunctionPair",
    "FusedDataset",
    "GaussianLinear",
    "HeavyTailLinear",
    "InferenceConfig",
    "IntervalResult",
    "LearnerConfig",
    "LinearContrast",
    "LogNormalRelative",
    "NuisanceConfig",
    "Product",
    "Ratio",
    "ThresholdProduct",
    "ValidationStudy",
    "compose_delta",
    "cs_bounds_discrete",
    "difference_variance_bounds",
    "infer",
    "infer_identifiable",
    "ingest_csv",
    "make_estimand",
    "ols_coefficient_bounds",
    "register_estimand",
    "run_monte_carlo",
    "run_sweep",
    "sample_dgp",
    "tight_bounds_discrete",
)
