"""Shared network blocks: snake-beta, RoPE, attention, masked norms."""

import numpy as np
import pytest

from flow_tts.net import layers
from flow_tts.net.params import ModelParams
from flow_tts.numerics import ops
from flow_tts.numerics.gradcheck import grad_check
from flow_tts.numerics.tensor import Tensor

# Using pytest test functions


def snake_beta_at_unit_scales_test() -> None:
  x = np.linspace(-2, 2, 12).reshape(1, 3, 4)
  out = layers.snake_beta(Tensor(x), Tensor(np.zeros(3)), Tensor(np.zeros(3)))
  expected = x + np.sin(x) ** 2 / (1.0 + layers.SNAKE_EPS)
  np.testing.assert_allclose(out.data, expected, rtol=1e-12)


def snake_beta_gradient_test() -> None:
  rng = np.random.default_rng(0)
  x = Tensor(rng.uniform(-2, 2, size=(2, 3, 5)))
  log_alpha = Tensor(rng.uniform(-0.5, 0.5, size=3))
  log_beta = Tensor(rng.uniform(-0.5, 0.5, size=3))
  report = grad_check(
    lambda: ops.mean(layers.snake_beta(x, log_alpha, log_beta)),
    {"x": x, "log_alpha": log_alpha, "log_beta": log_beta},
    tol=1e-5,
  )
  assert report.passed, report.failures()


def snake_beta_channel_mismatch_test() -> None:
  with pytest.raises(ValueError):
    layers.snake_beta(
      Tensor(np.zeros((1, 3, 4))), Tensor(np.zeros(2)), Tensor(np.zeros(2))
    )


def rope_position_zero_is_identity_test() -> None:
  x = Tensor(np.random.default_rng(1).standard_normal((1, 6)))
  np.testing.assert_allclose(layers.rope_rotate(x, [0]).data, x.data)


def rope_preserves_pair_norms_test() -> None:
  x = Tensor(np.random.default_rng(2).standard_normal((5, 8)))
  out = layers.rope_rotate(x, np.arange(5)).data
  pairs_in = x.data.reshape(5, 4, 2)
  pairs_out = out.reshape(5, 4, 2)
  np.testing.assert_allclose(
    np.linalg.norm(pairs_out, axis=-1), np.linalg.norm(pairs_in, axis=-1)
  )


def rope_relative_offset_test() -> None:
  """q.k after rotation depends only on the position difference."""
  rng = np.random.default_rng(3)
  for _ in range(100):
    q = rng.standard_normal((1, 8))
    k = rng.standard_normal((1, 8))
    m, n = rng.integers(0, 64, size=2)
    shift = int(rng.integers(1, 128))

    def logit(a: int, b: int) -> float:
      rq = layers.rope_rotate(Tensor(q), [a]).data[0]
      rk = layers.rope_rotate(Tensor(k), [b]).data[0]
      return float(rq @ rk)

    base = logit(int(m), int(n))
    assert logit(int(m) + shift, int(n) + shift) == pytest.approx(
      base, rel=1e-6, abs=1e-6
    )


def rope_odd_head_dim_test() -> None:
  with pytest.raises(ValueError):
    layers.rope_angles(np.arange(3), 5)


def _attention_params(seed: int = 0) -> ModelParams:
  return ModelParams.initialize(
    layers.attention_specs("attn", 8, 8), seed, np.float64
  )


def attention_ignores_masked_keys_test() -> None:
  params = _attention_params()
  rng = np.random.default_rng(4)
  x = rng.standard_normal((1, 5, 8))
  mask = np.array([[True, True, True, False, False]])
  changed = x.copy()
  changed[0, 3:] = rng.standard_normal((2, 8))
  a = layers.attention(Tensor(x), mask, params, "attn", 2, rope=True)
  b = layers.attention(Tensor(changed), mask, params, "attn", 2, rope=True)
  np.testing.assert_allclose(a.data[0, :3], b.data[0, :3], atol=1e-12)


def rope_attention_gradient_test() -> None:
  params = _attention_params(1)
  x = Tensor(np.random.default_rng(5).uniform(-2, 2, size=(2, 4, 8)))
  mask = np.array([[True] * 4, [True, True, True, False]])
  weights = np.random.default_rng(6).uniform(-1, 1, size=(2, 4, 8))
  report = grad_check(
    lambda: ops.sum(
      layers.attention(x, mask, params, "attn", 2, rope=True) * weights
    ),
    {"x": x} | dict(params.items()),
    max_elements=8,
  )
  assert report.passed, report.failures()


def _norm_params(channels: int) -> ModelParams:
  return ModelParams.initialize(
    layers.norm_specs("norm", channels), 0, np.float64
  )


def masked_group_norm_matches_unpadded_test() -> None:
  """Statistics come from valid frames only."""
  params = _norm_params(4)
  x = np.random.default_rng(7).standard_normal((1, 4, 8))
  keep = np.zeros((1, 1, 8), dtype=bool)
  keep[..., :5] = True
  padded = layers.masked_group_norm(Tensor(x), keep, 2, params, "norm")
  trimmed = layers.masked_group_norm(
    Tensor(x[:, :, :5]), np.ones((1, 1, 5), dtype=bool), 2, params, "norm"
  )
  np.testing.assert_allclose(padded.data[:, :, :5], trimmed.data, atol=1e-12)


def masked_group_norm_normalizes_groups_test() -> None:
  params = _norm_params(4)
  x = np.random.default_rng(8).standard_normal((2, 4, 6)) * 3 + 1
  out = layers.masked_group_norm(
    Tensor(x), np.ones((2, 1, 6), dtype=bool), 2, params, "norm"
  ).data
  grouped = out.reshape(2, 2, 2, 6)
  np.testing.assert_allclose(grouped.mean(axis=(2, 3)), 0, atol=1e-12)
  np.testing.assert_allclose(grouped.var(axis=(2, 3)), 1, atol=1e-4)


def conv_is_same_padded_test() -> None:
  params = ModelParams.initialize(layers.conv_specs("c", 3, 5, 3), 0)
  x = Tensor(np.zeros((2, 3, 7), dtype=np.float32))
  assert layers.conv(x, params, "c").shape == (2, 5, 7)
  assert layers.conv(x, params, "c", stride=2).shape == (2, 5, 4)
