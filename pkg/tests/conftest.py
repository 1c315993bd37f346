"""Shared test helpers: finite differences and tiny model builders."""

import numpy as np
import pytest

from stagesum import autodiff as ad
from stagesum.autodiff import Tensor


def finite_diff(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-valued fn over array x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def grad_of(fn_build, x: np.ndarray) -> np.ndarray:
    """Analytic gradient of scalar fn_build(Tensor(x)) w.r.t. x."""
    t = Tensor(x, requires_grad=True)
    with ad.new_tape():
        out = fn_build(t)
        out.backward()
    return t.grad.copy()


def assert_grad_matches(fn_build, x: np.ndarray, h: float = 1e-6,
                        rtol: float = 1e-4, atol: float = 1e-7):
    """Compare analytic and central-finite-difference gradients."""
    x = np.array(x, dtype=np.float64)
    analytic = grad_of(fn_build, x)

    def value():
        with ad.no_grad():
            return float(fn_build(Tensor(x)).data)

    fd = finite_diff(value, x, h)
    err = np.abs(fd - analytic)
    tol = atol + rtol * np.maximum(np.abs(fd), np.abs(analytic))
    assert (err <= tol).all(), (
        f"gradient mismatch: max abs err {err.max()}, "
        f"worst rel {(err / np.maximum(np.abs(fd), 1e-12)).max()}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
