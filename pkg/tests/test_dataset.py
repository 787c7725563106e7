import numpy as np
import pytest

from fusion_bounds.dataset import FusedDataset, ingest_csv
from fusion_bounds.utils import (
    EmptyArmError,
    InputValidationError,
    RowError,
    SchemaError,
)


def test_from_arrays_censors_the_unobserved_arm():
    data = FusedDataset.from_arrays(
        np.arange(4.0), [1, 0, 1, 0], [1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]
    )
    assert data.n == 4
    assert data.p_x == data.p_y == data.p_z == 1
    assert np.isnan(data.y[1, 0]) and np.isnan(data.z[0, 0])
    assert data.y_rows.tolist() == [0, 2]
    assert data.z_rows.tolist() == [1, 3]


def test_dataset_is_read_only():
    data = FusedDataset.from_arrays(
        np.arange(4.0), [1, 0, 1, 0], np.ones(4), np.ones(4)
    )
    with pytest.raises(ValueError):
        data.x[0, 0] = 3.0


def test_single_arm_is_rejected():
    with pytest.raises(EmptyArmError):
        FusedDataset.from_arrays(np.arange(3.0), [1, 1, 1], np.ones(3), np.ones(3))


def test_bad_indicator_is_rejected():
    with pytest.raises(InputValidationError):
        FusedDataset.from_arrays(np.arange(3.0), [1, 2, 0], np.ones(3), np.ones(3))


def test_ingest_well_formed_file(write_csv):
    path = write_csv(
        ["x1,x2,r,y,z", "0.5,1,1,2.5,", "1.5,-1,0,,3", "2,0,1,1e-3,", "-0.25,3,0,,4.5"]
    )
    data = ingest_csv(path)
    assert data.n == 4
    assert data.p_x == 2
    assert data.r.tolist() == [1, 0, 1, 0]
    assert data.y[2, 0] == pytest.approx(1e-3)
    assert data.z[3, 0] == pytest.approx(4.5)
    assert data.line_numbers is not None and data.line_numbers.tolist() == [2, 3, 4, 5]


def test_ingest_names_the_offending_line(write_csv):
    path = write_csv(["x1,r,y,z", "0,1,1,", "1,0,,2", "2,1,3,4"])
    with pytest.raises(RowError) as info:
        ingest_csv(path)
    assert info.value.line == 4
    assert "line 4" in str(info.value)


def test_ingest_rejects_missing_columns(write_csv):
    with pytest.raises(SchemaError):
        ingest_csv(write_csv(["x1,r,y", "0,1,1"]))


def test_ingest_rejects_extra_columns(write_csv):
    with pytest.raises(SchemaError):
        ingest_csv(write_csv(["x1,r,y,z,w", "0,1,1,,3"]))


def test_ingest_rejects_a_single_arm(write_csv):
    with pytest.raises(EmptyArmError):
        ingest_csv(write_csv(["x1,r,y,z", "0,1,1,", "1,1,2,"]))


def test_ingest_rejects_non_numeric_values(write_csv):
    with pytest.raises(RowError) as info:
        ingest_csv(write_csv(["x1,r,y,z", "0,1,abc,", "1,0,,2"]))
    assert info.value.line == 2
