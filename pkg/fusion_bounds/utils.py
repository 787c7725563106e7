import logging
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import numpy.typing as npt

logger = logging.getLogger("fusion-bounds")

type FloatArray = npt.NDArray[np.float64]
type IntArray = npt.NDArray[np.int64]
type BoolArray = npt.NDArray[np.bool_]


class FusionError(Exception):
    pass


class UsageError(FusionError):
    pass


class InputValidationError(FusionError):
    pass


class EstimationError(FusionError):
    pass


class NonSymmetricError(InputValidationError):
    pass


class IndefiniteInputError(InputValidationError):
    pass


class DimensionMismatchError(InputValidationError):
    pass


class TooFewObservationsError(InputValidationError):
    pass


class DegenerateDesignError(InputValidationError):
    pass


class NonFiniteTargetError(InputValidationError):
    pass


class SingleClassError(InputValidationError):
    pass


class EmptyInputError(InputValidationError):
    pass


class EmptyArmError(InputValidationError):
    pass


class LengthMismatchError(InputValidationError):
    pass


class MassMismatchError(InputValidationError):
    pass


class InvalidSpecError(InputValidationError):
    pass


class UnsupportedSpecError(InputValidationError):
    pass


class SupportError(InputValidationError):
    pass


class SchemaError(InputValidationError):
    pass


class RowError(InputValidationError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class NonFiniteEvaluationError(EstimationError):
    pass


class SingularCompositionError(EstimationError):
    pass


class ScalarEstimandRequiredError(EstimationError):
    pass


def derive_seed(seed: int, *path: int) -> int:
    """Derives an independent 63-bit seed for the stream identified by ``path``."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=tuple(path))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def as_2d(values: npt.ArrayLike, *, name: str) -> FloatArray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatchError(
            f"expected {name} to be 1-D or 2-D, got {arr.ndim}-D"
        )
    return arr


def jsonable(value: Any) -> Any:
    """Converts numpy scalars, arrays and dataclass-like mappings into JSON values."""
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        f = float(value)
        return f if np.isfinite(f) else None
    return value


def merge_flags(*groups: Optional[List[str]]) -> List[str]:
    seen: Dict[str, None] = {}
    for group in groups:
        for flag in group or []:
            seen.setdefault(flag, None)
    return list(seen)
