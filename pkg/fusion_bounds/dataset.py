from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import numpy.typing as npt
import pandas as pd

from .utils import (
    DimensionMismatchError,
    EmptyArmError,
    FloatArray,
    InputValidationError,
    IntArray,
    RowError,
    SchemaError,
    as_2d,
    logger,
)

_X_COLUMN = re.compile(r"^x([1-9][0-9]*)$")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FusedDataset:
    """Two fused samples sharing covariates: r=1 rows observe y, r=0 rows observe z.

    Args:
        x: (n, p_x) covariates, observed on every row.
        r: (n,) data-source indicator.
        y: (n, p_y) responses of the r=1 sample, NaN on r=0 rows.
        z: (n, p_z) responses of the r=0 sample, NaN on r=1 rows.
        line_numbers: optional source line of each row, used in diagnostics.
    """

    x: FloatArray
    r: IntArray
    y: FloatArray
    z: FloatArray
    line_numbers: Optional[IntArray] = None

    def __post_init__(self) -> None:
        n = self.x.shape[0]
        if self.x.ndim != 2 or self.y.ndim != 2 or self.z.ndim != 2 or self.r.ndim != 1:
            raise DimensionMismatchError("expected 2-D x, y, z and 1-D r")
        for name, arr in (("r", self.r), ("y", self.y), ("z", self.z)):
            if arr.shape[0] != n:
                raise DimensionMismatchError(
                    f"expected {name} to have {n} rows, got {arr.shape[0]}"
                )
        if not np.all(np.isin(self.r, (0, 1))):
            raise InputValidationError("r must only contain 0 and 1")
        if not np.all(np.isfinite(self.x)):
            raise InputValidationError("x has non-finite entries")
        observed_y = self.r == 1
        if not np.all(np.isfinite(self.y[observed_y])):
            raise InputValidationError("y has non-finite entries on r=1 rows")
        if not np.all(np.isnan(self.y[~observed_y])):
            raise InputValidationError("y must be absent on r=0 rows")
        if not np.all(np.isfinite(self.z[~observed_y])):
            raise InputValidationError("z has non-finite entries on r=0 rows")
        if not np.all(np.isnan(self.z[observed_y])):
            raise InputValidationError("z must be absent on r=1 rows")
        if not observed_y.any() or observed_y.all():
            raise EmptyArmError(
                "both data sources must be present, got "
                f"{int(observed_y.sum())} rows with r=1 "
                f"and {int((~observed_y).sum())} rows with r=0"
            )

    @classmethod
    def from_arrays(
        cls,
        x: npt.ArrayLike,
        r: npt.ArrayLike,
        y: npt.ArrayLike,
        z: npt.ArrayLike,
        *,
        line_numbers: Optional[npt.ArrayLike] = None,
    ) -> FusedDataset:
        """Builds a dataset from full-length arrays, masking the unobserved arm."""
        x_arr = as_2d(x, name="x").copy()
        r_arr = np.asarray(r).astype(np.int64).ravel()
        y_arr = as_2d(y, name="y").copy()
        z_arr = as_2d(z, name="z").copy()
        if y_arr.shape[0] == r_arr.shape[0]:
            y_arr[r_arr == 0] = np.nan
        if z_arr.shape[0] == r_arr.shape[0]:
            z_arr[r_arr == 1] = np.nan
        lines = None
        if line_numbers is not None:
            lines = _frozen(np.asarray(line_numbers, dtype=np.int64))
        return cls(
            x=_frozen(x_arr),
            r=_frozen(r_arr),
            y=_frozen(y_arr),
            z=_frozen(z_arr),
            line_numbers=lines,
        )

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def p_x(self) -> int:
        return int(self.x.shape[1])

    @property
    def p_y(self) -> int:
        return int(self.y.shape[1])

    @property
    def p_z(self) -> int:
        return int(self.z.shape[1])

    @property
    def y_rows(self) -> IntArray:
        return np.flatnonzero(self.r == 1)

    @property
    def z_rows(self) -> IntArray:
        return np.flatnonzero(self.r == 0)


def ingest_csv(path: str | os.PathLike[str]) -> FusedDataset:
    """Reads a fused dataset with header ``x1..xp, r, y, z``.

    Missing responses are empty fields. Errors name the 1-based file line.
    """
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            encoding="utf-8",
            skip_blank_lines=True,
        )
    except (
        pd.errors.EmptyDataError,
        pd.errors.ParserError,
        UnicodeDecodeError,
    ) as error:
        raise SchemaError(f"could not parse {path}: {error}") from error

    columns: List[str] = [c.strip() for c in frame.columns]
    x_indices = sorted(int(m.group(1)) for c in columns if (m := _X_COLUMN.match(c)))
    expected = {f"x{i}" for i in range(1, len(x_indices) + 1)} | {"r", "y", "z"}
    if x_indices != list(range(1, len(x_indices) + 1)):
        raise SchemaError(
            f"covariate columns must be x1..xp without gaps, got {x_indices}"
        )
    missing = sorted(expected - set(columns))
    extra = sorted(set(columns) - expected)
    if missing or extra:
        raise SchemaError(
            f"bad header in {path}: missing columns {missing}, "
            f"unexpected columns {extra}"
        )
    frame.columns = pd.Index(columns)

    n = len(frame)
    p = len(x_indices)
    x = np.empty((n, p))
    r = np.empty(n, dtype=np.int64)
    y = np.full((n, 1), np.nan)
    z = np.full((n, 1), np.nan)
    x_cols = [f"x{i}" for i in range(1, p + 1)]
    # header is line 1
    lines = np.arange(2, n + 2, dtype=np.int64)

    for i, row in enumerate(frame.itertuples(index=False)):
        record = dict(zip(columns, row))
        line = int(lines[i])
        r_raw = record["r"].strip()
        if r_raw not in ("0", "1"):
            raise RowError(line, f"r must be 0 or 1, got {r_raw!r}")
        r[i] = int(r_raw)
        for j, col in enumerate(x_cols):
            x[i, j] = _parse_number(record[col], line=line, column=col)
        y_raw = record["y"].strip()
        z_raw = record["z"].strip()
        if r[i] == 1:
            if z_raw != "":
                raise RowError(line, "z must be empty when r=1")
            if y_raw == "":
                raise RowError(line, "y must be present when r=1")
            y[i, 0] = _parse_number(y_raw, line=line, column="y")
        else:
            if y_raw != "":
                raise RowError(line, "y must be empty when r=0")
            if z_raw == "":
                raise RowError(line, "z must be present when r=0")
            z[i, 0] = _parse_number(z_raw, line=line, column="z")

    if n == 0 or r.min() == r.max():
        raise EmptyArmError(f"{path} must contain rows with r=1 and rows with r=0")

    observed = int(r.sum())
    logger.info(
        "read %d rows (%d with y, %d with z) from %s", n, observed, n - observed, path
    )
    return FusedDataset.from_arrays(x, r, y, z, line_numbers=lines)


def _parse_number(raw: str, *, line: int, column: str) -> float:
    text = raw.strip()
    if text == "":
        raise RowError(line, f"{column} is empty")
    try:
        value = float(text)
    except ValueError as error:
        raise RowError(line, f"{column} is not a number: {text!r}") from error
    if not np.isfinite(value):
        raise RowError(line, f"{column} is not finite: {text!r}")
    return value
