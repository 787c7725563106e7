from pathlib import Path
from typing import Callable, List

import numpy as np
import pytest

from fusion_bounds.dataset import FusedDataset


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="run the Monte Carlo acceptance studies",
    )


def pytest_collection_modifyitems(
    config: pytest.Config, items: List[pytest.Item]
) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_linear_data(n: int = 400, seed: int = 7) -> FusedDataset:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = x @ np.array([1.0, -0.5, 0.2]) + rng.normal(size=n)
    z = x @ np.array([0.5, 0.5, 0.0]) + 0.5 * rng.normal(size=n)
    r = (rng.random(n) < 0.5).astype(int)
    return FusedDataset.from_arrays(x, r, y, z)


@pytest.fixture
def linear_data() -> FusedDataset:
    return make_linear_data()


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[..., Path]:
    def write(lines: List[str], name: str = "data.csv") -> Path:
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return write
