import numpy as np
import pytest

from fusion_bounds.folds import kfold_split
from fusion_bounds.utils import TooFewObservationsError


def test_even_split():
    folds = kfold_split(10, 2, 5)
    assert folds.sizes() == [5, 5]
    rows = np.concatenate([folds.test_rows(0), folds.test_rows(1)])
    assert sorted(rows.tolist()) == list(range(10))


def test_remainder_spread():
    assert sorted(kfold_split(7, 3, 1).sizes(), reverse=True) == [3, 2, 2]


def test_seeded_assignment_is_deterministic():
    first = kfold_split(100, 5, 42).assignment
    assert np.array_equal(first, kfold_split(100, 5, 42).assignment)
    assert not np.array_equal(first, kfold_split(100, 5, 43).assignment)


def test_train_and_test_rows_partition():
    folds = kfold_split(23, 4, 0)
    for k in range(4):
        train, test = folds.train_rows(k), folds.test_rows(k)
        assert np.intersect1d(train, test).size == 0
        assert train.size + test.size == 23


@pytest.mark.parametrize("n, k", [(5, 6), (5, 1)])
def test_bad_fold_counts(n, k):
    with pytest.raises(TooFewObservationsError):
        kfold_split(n, k, 0)
