"""Adam optimizer tests against closed-form and hand-rolled traces."""

import numpy as np
import pytest

from stagesum.autodiff import Tensor
from stagesum.optim import AdamState, TrainingError, adam_step


def make_params(values):
    return {name: Tensor(np.array(v, dtype=float), requires_grad=True)
            for name, v in values.items()}


def test_zero_gradient_leaves_params_unchanged():
    params = make_params({"w": [1.0, -2.0]})
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.zeros(2)}, state)
    assert np.array_equal(params["w"].data, [1.0, -2.0])
    assert state.step == 1
    # moment buffers exist and decayed to zero
    assert np.array_equal(state.m["w"], np.zeros(2))
    assert np.array_equal(state.v["w"], np.zeros(2))


def test_first_step_magnitude_is_lr():
    # closed form at step 1: m_hat = g, v_hat = g^2, update = lr*g/(|g|+eps)
    params = make_params({"w": 0.0})
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.array(1.0)}, state)
    expected = -0.1 * 1.0 / (1.0 + 1e-8)
    assert abs(float(params["w"].data) - expected) < 1e-15


def test_two_steps_match_scalar_reference():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    g = 0.7
    # hand-rolled scalar Adam trace
    w_ref, m, v = 2.0, 0.0, 0.0
    for step in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        w_ref -= lr * m_hat / (np.sqrt(v_hat) + eps)

    params = make_params({"w": 2.0})
    state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
    for _ in range(2):
        adam_step(params, {"w": np.array(g)}, state)
    assert abs(float(params["w"].data) - w_ref) < 1e-14


def test_missing_gradient_names_parameter():
    params = make_params({"w": 1.0, "b": 0.0})
    with pytest.raises(TrainingError, match="'b'"):
        adam_step(params, {"w": np.array(1.0)}, AdamState())


def test_gradient_shape_mismatch():
    params = make_params({"w": [1.0, 2.0]})
    with pytest.raises(TrainingError, match="shape"):
        adam_step(params, {"w": np.zeros(3)}, AdamState())


def test_step_counter_strictly_increases():
    params = make_params({"w": 1.0})
    state = AdamState()
    seen = []
    for _ in range(3):
        adam_step(params, {"w": np.array(0.5)}, state)
        seen.append(state.step)
    assert seen == [1, 2, 3]
