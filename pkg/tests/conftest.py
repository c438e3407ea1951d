import numpy as np
import pytest

from rnfloc import radar


@pytest.fixture(scope="session")
def sc2d():
    return radar.builtin_scenario("scenario1-2d")


@pytest.fixture(scope="session")
def sc3d():
    return radar.builtin_scenario("scenario2-3d")


def central_gradient(f, x):
    """Central differences with step 1e-5 * (1 + |x_i|)."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = 1e-5 * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))
