import numpy as np
import pytest

from dpsynth.dataio import Dataset, split_dataset
from dpsynth.fixtures import load_bundled


@pytest.fixture(scope="session")
def digits():
    return load_bundled("toy_digits")


@pytest.fixture(scope="session")
def gaussians():
    return load_bundled("three_gaussians")


def make_dataset(n=30, K=3, shape=(2, 2, 1), seed=0, split=True):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.random((n, *shape)).astype(np.float32), np.arange(n) % K, K)
    return split_dataset(ds, (0.6, 0.2, 0.2), seed) if split else ds


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
