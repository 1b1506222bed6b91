from pathlib import Path

import numpy as np
import pytest

from fedwidth import data
from fedwidth.model import MlpSpec

DATA_DIR = Path(__file__).parent / "data"
MNIST_IMAGES = DATA_DIR / "mini-images-idx3-ubyte.gz"
MNIST_LABELS = DATA_DIR / "mini-labels-idx1-ubyte.gz"


def unit_columns(rng, n0, n, scale=0.9):
    x = rng.standard_normal((n0, n))
    return scale * x / np.linalg.norm(x, axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_task():
    """Synthetic 2-class task (n0=4, 6 per class) in canonical order with 4 exclusive clients."""
    ds = data.gen_synthetic(4, 6, 0.8, seed=3)
    part = data.partition_exclusive(ds.classes, 4)
    train, part = data.reorder_global(ds, part)
    test = data.gen_synthetic(4, 3, 0.8, seed=4)
    return train, part, test


@pytest.fixture
def tiny_spec():
    return MlpSpec((4, 12, 12, 1), "tanh", 1.5, 0.1)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
