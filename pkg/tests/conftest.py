import numpy as np
import pytest

from whittleq.arms import circulant_instance, one_hot_features


@pytest.fixture(scope="session")
def arm():
    return circulant_instance()


@pytest.fixture(scope="session")
def fmap():
    return one_hot_features(4)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
