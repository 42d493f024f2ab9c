import numpy as np
import pytest

from trustal.config import build
from trustal.data_pool import DatasetSpec, build_dataset


@pytest.fixture
def small_spec():
    return DatasetSpec(name="tiny", dims=4, classes=3, n=120, sep=4.0, seed=3)


@pytest.fixture
def small_data(small_spec):
    return build_dataset(small_spec)


def tiny_config(**over):
    """A fast run configuration; keyword names use ``__`` for dots."""
    flat = {
        "dataset.n": 300, "dataset.dims": 4, "dataset.classes": 3, "dataset.sep": 3.0,
        "initial_fraction": 0.05, "per_round_fraction": 0.05, "rounds": 4,
        "train.learning_rate": 0.01, "train.epochs": 5, "train.batch_size": 16, "train.hidden": 8,
    }
    flat.update({k.replace("__", "."): v for k, v in over.items()})
    return build(flat)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
