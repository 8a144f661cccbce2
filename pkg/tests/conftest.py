import numpy as np
import pytest

from tsvfsim import hilbert as hs


@pytest.fixture
def q():
    return hs.qubit("q")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
