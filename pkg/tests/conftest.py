import numpy as np
import pytest

from mars.bt_core import Dataset, preference_tuple, reward_params


def random_tuple(rng, dim, tuple_id="t", scale=1.0):
    chosen = rng.standard_normal(dim) * scale
    rejected = rng.standard_normal(dim) * scale
    return preference_tuple(tuple_id, chosen, rejected)


def random_dataset(rng, n, dim, scale=1.0, prefix="t"):
    return Dataset(random_tuple(rng, dim, f"{prefix}{i}", scale) for i in range(n))


def random_params(rng, dim, scale=1.0):
    return reward_params(rng.standard_normal(dim) * scale)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
