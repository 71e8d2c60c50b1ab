import numpy as np
import pytest

from pmemix.domain import build_grid


@pytest.fixture
def unit_grid():
    return build_grid(0.0, 1.0, 99)


@pytest.fixture
def small_grid():
    return build_grid(0.0, 1.0, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)
