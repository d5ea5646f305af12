import numpy as np
import pytest

from hlte.datamodel import CombinedDataset
from hlte.simulate import SyntheticConfig


def small_dataset(n=200, seed=0, d_x=3):
    gen = np.random.default_rng(seed)
    x = gen.normal(size=(n, d_x))
    r = np.zeros(n, dtype=int)
    r[n // 2:] = 1
    a = np.where(r == 0, gen.integers(0, 2, n), np.nan)
    s = x[:, :1] + gen.normal(size=(n, 1))
    y = np.where(r == 1, s[:, 0] + gen.normal(size=n), np.nan)
    return CombinedDataset(x, r, s, a, y)


@pytest.fixture
def tiny():
    return small_dataset()


@pytest.fixture(scope="session")
def synth_to():
    cfg = SyntheticConfig(n=100_000, gamma_pi=2.0, gamma_rho=1.0, seed=11)
    data, oracle = cfg.generate()
    return cfg, data, oracle


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
