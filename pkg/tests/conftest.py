import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo tests with many trials")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_pd(d, rng, floor=0.1):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + floor * np.eye(d)
