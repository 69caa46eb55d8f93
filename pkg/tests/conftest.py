import numpy as np
import pytest

from prenmf.fixtures import get_fixture


@pytest.fixture
def nested_squares():
    return get_fixture("nested-squares")


@pytest.fixture
def sepex():
    return get_fixture("sepex")


@pytest.fixture
def noisy():
    return get_fixture("noisy")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_nonneg(rng, m, n, distinct=True):
    """Random nonnegative matrix, regenerated until columns are distinct."""
    for _ in range(50):
        M = rng.random((m, n)) + 0.05
        norm = M / np.abs(M).sum(axis=0)
        ok = True
        for i in range(n):
            for j in range(i):
                if np.abs(norm[:, i] - norm[:, j]).max() < 1e-3:
                    ok = False
        if ok or not distinct:
            return M
    raise AssertionError("could not generate distinct columns")
