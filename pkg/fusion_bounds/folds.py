from dataclasses import dataclass
from typing import List

import numpy as np

from .utils import IntArray, TooFewObservationsError


@dataclass(frozen=True)
class FoldAssignment:
    """Per-observation fold labels for K-fold cross-fitting."""

    n: int
    k_folds: int
    assignment: IntArray
    seed: int

    def test_rows(self, k: int) -> IntArray:
        return np.flatnonzero(self.assignment == k)

    def train_rows(self, k: int) -> IntArray:
        return np.flatnonzero(self.assignment != k)

    def sizes(self) -> List[int]:
        return [int(s) for s in np.bincount(self.assignment, minlength=self.k_folds)]


def kfold_split(n: int, k_folds: int, seed: int) -> FoldAssignment:
    """Shuffles the indices with a seeded PRNG and deals fold labels round-robin."""
    if k_folds < 2 or k_folds > n:
        raise TooFewObservationsError(
            f"expected k_folds between 2 and n={n}, got {k_folds}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n, dtype=np.int64) % k_folds
    return FoldAssignment(n=n, k_folds=k_folds, assignment=assignment, seed=seed)
