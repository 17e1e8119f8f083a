import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def random_image(rng):
    def make(h=16, w=16):
        return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    return make
