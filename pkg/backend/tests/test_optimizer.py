# tests/test_optimizer.py

import numpy as np
import pytest

from app.core.exceptions import MissingGradientError
from app.core.optimizer import AdamWState, adamw_step
from app.core.params import ModelParams
from app.core.tensor import Tensor


def _single(value: float, grad: float | None, dtype=np.float64) -> ModelParams:
    tensor = Tensor([value], requires_grad=True, dtype=dtype)
    if grad is not None:
        tensor.grad = np.array([grad], dtype=dtype)
    return ModelParams({"theta": tensor})


def test_zero_gradient_without_decay_keeps_params(rng):
    params = ModelParams({"w": Tensor(rng.normal(size=(3, 4)), requires_grad=True)})
    params["w"].grad = np.zeros((3, 4), dtype=np.float32)
    updated = adamw_step(params, AdamWState(), learning_rate=1e-3, weight_decay=0.0)
    assert updated.equals(params)


def test_first_step_moves_by_learning_rate():
    updated = adamw_step(_single(0.5, 1.0), AdamWState(), learning_rate=1e-3, weight_decay=0.0)
    assert updated["theta"].item() == pytest.approx(0.5 - 1e-3, abs=1e-9)


def test_matches_scripted_oracle_on_quadratic():
    # f(θ) = (θ − 3)²，g = 2(θ − 3)
    lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 1e-2
    theta_ref, m, v = 1.0, 0.0, 0.0
    params = _single(1.0, None)
    state = AdamWState()
    for t in range(1, 6):
        g = 2.0 * (theta_ref - 3.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta_ref = theta_ref - lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * theta_ref)

        current = params["theta"].item()
        params["theta"].grad = np.array([2.0 * (current - 3.0)])
        params = adamw_step(params, state, learning_rate=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
        assert params["theta"].item() == pytest.approx(theta_ref, abs=1e-6)
    assert state.step == 5


def test_explicit_grads_override_buffers():
    params = _single(0.5, 100.0)
    updated = adamw_step(params, AdamWState(), learning_rate=1e-3, weight_decay=0.0, grads={"theta": np.array([-1.0])})
    assert updated["theta"].item() == pytest.approx(0.5 + 1e-3, abs=1e-9)


def test_missing_gradient_names_tensor():
    with pytest.raises(MissingGradientError, match="theta"):
        adamw_step(_single(0.5, None), AdamWState(), learning_rate=1e-3)


def test_update_keeps_dtype_and_flags():
    params = _single(0.5, 1.0, dtype=np.float32)
    updated = adamw_step(params, AdamWState(), learning_rate=1e-3)
    assert updated["theta"].dtype == np.float32
    assert updated["theta"].requires_grad
    assert updated["theta"].grad is None
    assert params["theta"].item() == pytest.approx(0.5)
