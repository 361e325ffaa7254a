import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_grad(fn, x, step=1e-4):
    """Central finite differences of scalar fn() w.r.t. array x (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        hi = fn()
        x[i] = orig - step
        lo = fn()
        x[i] = orig
        g[i] = (hi - lo) / (2.0 * step)
        it.iternext()
    return g


def rel_err(analytic, numeric):
    """Gradient comparison: absolute near zero, relative when large."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(1.0, np.abs(analytic) + np.abs(numeric))
    return float((diff / scale).max())
