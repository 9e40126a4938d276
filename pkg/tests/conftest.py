import numpy as np
import pytest

from fieldwise.model import RankPolicy, init_model


def random_model(rng, dims, rank, scale=1.0):
    """Model with Gaussian factors and biases, so every term is exercised."""
    model = init_model(dims, RankPolicy.constant(rank), 1.0, int(rng.integers(1 << 31)))
    for p in model.parameters():
        p[...] = rng.normal(0.0, scale, p.shape)
    return model


def random_small_model(rng, max_m=4, max_d=6, max_r=3):
    m = int(rng.integers(1, max_m + 1))
    dims = tuple(int(x) for x in rng.integers(1, max_d + 1, size=m))
    return random_model(rng, dims, int(rng.integers(1, max_r + 1)))


def random_indices(rng, dims, n):
    return np.column_stack([rng.integers(0, d, size=n) for d in dims])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
