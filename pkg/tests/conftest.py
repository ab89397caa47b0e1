import numpy as np
import pytest

from hatstory.tensor import Rng


@pytest.fixture
def rng():
    return Rng(0)


def assert_close(actual, expected, tol=1e-12):
    actual = np.asarray(getattr(actual, "data", actual), dtype=np.float64)
    expected = np.asarray(getattr(expected, "data", expected), dtype=np.float64)
    assert actual.shape == expected.shape, f"{actual.shape} != {expected.shape}"
    err = float(np.max(np.abs(actual - expected))) if actual.size else 0.0
    assert err <= tol, f"max abs err {err} > {tol}\nactual={actual}\nexpected={expected}"
