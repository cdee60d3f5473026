import numpy as np
import pytest

from semicycle import tensor as T


@pytest.fixture
def double():
    with T.precision("double"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
