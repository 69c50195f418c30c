"""Adam and gradient clipping."""

import numpy as np
import pytest

from flow_tts.config import TrainConfig
from flow_tts.net.params import ModelParams, ParamSpec
from flow_tts.train.optim import (
  AdamState,
  adam_update,
  clip_by_global_norm,
  collect_gradients,
  global_norm,
)

# Using pytest test functions


def _params() -> ModelParams:
  return ModelParams.initialize(
    {"w": ParamSpec((2, 2)), "b": ParamSpec((2,), "zeros")}, seed=0
  )


def clip_leaves_small_gradients_test() -> None:
  grads = {"a": np.array([0.3, 0.4])}
  clipped, norm = clip_by_global_norm(grads, 1.0)
  assert norm == pytest.approx(0.5)
  assert clipped is grads


def clip_rescales_jointly_test() -> None:
  grads = {"a": np.array([3.0, 0.0]), "b": np.array([[0.0], [4.0]])}
  clipped, norm = clip_by_global_norm(grads, 1.0)
  assert norm == pytest.approx(5.0)
  assert global_norm(clipped) == pytest.approx(1.0)
  np.testing.assert_allclose(clipped["a"], [0.6, 0.0])
  np.testing.assert_allclose(clipped["b"], [[0.0], [0.8]])


def unreached_parameters_get_zero_gradients_test() -> None:
  params = _params()
  params["w"].grad = np.ones((2, 2), dtype=np.float32)
  grads = collect_gradients(params)
  assert np.all(grads["b"] == 0)
  assert np.all(grads["w"] == 1)


def first_adam_step_moves_by_learning_rate_test() -> None:
  """With bias correction the first step is lr * sign(g)."""
  params = _params()
  before = params["w"].data.copy()
  config = TrainConfig(learning_rate=0.01)
  grads = {
    "w": np.array([[1.0, -2.0], [0.5, 0.0]], dtype=np.float32),
    "b": np.zeros(2, dtype=np.float32),
  }
  state = adam_update(params, grads, AdamState.zeros(params), config)
  assert state.step == 1
  np.testing.assert_allclose(
    params["w"].data - before, -0.01 * np.sign(grads["w"]), atol=1e-6
  )
  assert np.all(params["b"].data == 0)
  assert params["w"].dtype == np.float32


def adam_state_carries_moments_test() -> None:
  params = _params()
  config = TrainConfig(learning_rate=0.01)
  grads = {
    "w": np.ones((2, 2), dtype=np.float32),
    "b": np.ones(2, dtype=np.float32),
  }
  state = AdamState.zeros(params)
  for _ in range(3):
    state = adam_update(params, grads, state, config)
  assert state.step == 3
  expected_m = 1 - config.adam_beta1**3
  np.testing.assert_allclose(state.m["w"], expected_m, rtol=1e-5)
  assert all(t.grad is None for t in params.values())
