"""
Building blocks shared by the encoder and decoder.

Each block comes as a pair: `*_specs(prefix, ...)` registers the
parameters it owns and the forward function reads them back from a
`ModelParams` under the same prefix. Channel-first tensors are
[B, C, T]; sequence-first tensors (attention) are [B, L, C].
"""

import math

import numpy as np
import numpy.typing as npt

from flow_tts.numerics import ops
from flow_tts.numerics.tensor import Array, ShapeError, Tensor
from flow_tts.net.params import ModelParams, ParamSpec

SNAKE_EPS = 1e-9
ROPE_BASE = 10000.0
MASKED_LOGIT = -1e4

type Specs = dict[str, ParamSpec]


# Parameter registration


def linear_specs(prefix: str, n_in: int, n_out: int) -> Specs:
  return {
    f"{prefix}.weight": ParamSpec((n_out, n_in)),
    f"{prefix}.bias": ParamSpec((n_out,), "zeros"),
  }


def conv_specs(
  prefix: str, c_in: int, c_out: int, kernel: int, zero: bool = False
) -> Specs:
  return {
    f"{prefix}.weight": ParamSpec(
      (c_out, c_in, kernel), "zeros" if zero else "fan_in"
    ),
    f"{prefix}.bias": ParamSpec((c_out,), "zeros"),
  }


def norm_specs(prefix: str, channels: int) -> Specs:
  return {
    f"{prefix}.gain": ParamSpec((channels,), "ones"),
    f"{prefix}.bias": ParamSpec((channels,), "zeros"),
  }


def snake_specs(prefix: str, channels: int) -> Specs:
  return {
    f"{prefix}.log_alpha": ParamSpec((channels,), "zeros"),
    f"{prefix}.log_beta": ParamSpec((channels,), "zeros"),
  }


def attention_specs(prefix: str, channels: int, inner: int) -> Specs:
  return (
    linear_specs(f"{prefix}.query", channels, inner)
    | linear_specs(f"{prefix}.key", channels, inner)
    | linear_specs(f"{prefix}.value", channels, inner)
    | linear_specs(f"{prefix}.out", inner, channels)
  )


# Elementary layers


def _along(vector: Tensor, axis: int, ndim: int) -> Tensor:
  """Reshapes a [C] vector to broadcast along `axis` of an ndim tensor."""
  shape = [1] * ndim
  shape[axis] = vector.shape[0]
  return ops.reshape(vector, shape)


def linear(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
  """x [..., in] -> [..., out]"""
  weight = params[f"{prefix}.weight"]
  if x.shape[-1] != weight.shape[1]:
    raise ShapeError(f"linear {prefix}", x.shape, weight.shape)
  out = x @ ops.transpose(weight, (1, 0))
  return out + params[f"{prefix}.bias"]


def conv(
  x: Tensor,
  params: ModelParams,
  prefix: str,
  stride: int = 1,
) -> Tensor:
  """
  Same-padded 1D convolution, [B, C_in, T] -> [B, C_out, ceil(T / stride)]
  """
  weight = params[f"{prefix}.weight"]
  kernel = weight.shape[2]
  out = ops.conv1d(x, weight, stride=stride, padding=kernel // 2)
  return out + _along(params[f"{prefix}.bias"], 1, 3)


def silu(x: Tensor) -> Tensor:
  return x * ops.sigmoid(x)


def channel_layer_norm(
  x: Tensor, params: ModelParams, prefix: str, axis: int = 1
) -> Tensor:
  normed = ops.layer_norm(x, axis=axis)
  axis = axis % x.ndim
  gain = _along(params[f"{prefix}.gain"], axis, x.ndim)
  bias = _along(params[f"{prefix}.bias"], axis, x.ndim)
  return normed * gain + bias


def masked_group_norm(
  x: Tensor,
  keep: npt.ArrayLike,
  groups: int,
  params: ModelParams,
  prefix: str,
  eps: float = 1e-5,
) -> Tensor:
  """
  Group normalization of [B, C, T] with statistics over valid frames only

  `keep` is a boolean [B, 1, T]. Padded frames come out as the bias.
  """
  batch, channels, length = x.shape
  if channels % groups != 0:
    raise ShapeError(f"group norm ({groups} groups)", x.shape)
  grouped_shape = (batch, groups, channels // groups, length)
  valid = np.broadcast_to(np.asarray(keep, dtype=bool), (batch, 1, length))
  keep4 = valid.reshape(batch, 1, 1, length)
  count = np.maximum(
    keep4.sum(axis=3, keepdims=True) * (channels // groups), 1
  ).astype(x.dtype)

  grouped = ops.where(keep4, ops.reshape(x, grouped_shape))
  mean = ops.sum(grouped, axis=(2, 3), keepdims=True) / count
  centered = ops.where(keep4, grouped - mean)
  variance = ops.sum(centered * centered, axis=(2, 3), keepdims=True) / count
  normed = ops.reshape(centered * ops.pow(variance + eps, -0.5), x.shape)
  gain = _along(params[f"{prefix}.gain"], 1, 3)
  bias = _along(params[f"{prefix}.bias"], 1, 3)
  return normed * gain + bias


def snake_beta(
  x: Tensor,
  log_alpha: Tensor,
  log_beta: Tensor,
  channel_axis: int = 1,
) -> Tensor:
  """
  x + 1 / (beta + eps) * sin^2(alpha * x), per channel

  alpha = exp(log_alpha), beta = exp(log_beta).
  """
  axis = channel_axis % x.ndim if x.ndim else 0
  if (
    x.ndim == 0
    or log_alpha.shape != (x.shape[axis],)
    or log_beta.shape != log_alpha.shape
  ):
    raise ShapeError("snake_beta", x.shape, log_alpha.shape, log_beta.shape)
  alpha = _along(ops.exp(log_alpha), axis, x.ndim)
  beta = _along(ops.exp(log_beta), axis, x.ndim)
  wave = ops.sin(alpha * x)
  return x + (wave * wave) / (beta + SNAKE_EPS)


def snake(
  x: Tensor, params: ModelParams, prefix: str, channel_axis: int = 1
) -> Tensor:
  return snake_beta(
    x,
    params[f"{prefix}.log_alpha"],
    params[f"{prefix}.log_beta"],
    channel_axis,
  )


# Attention


def rope_angles(positions: npt.ArrayLike, head_dim: int) -> Array:
  """[L, head_dim / 2] angles m * theta_i, theta_i = 10000^(-2i / d)"""
  if head_dim % 2 != 0:
    raise ValueError(f"RoPE needs an even head dimension, got {head_dim}")
  theta = ROPE_BASE ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
  return np.outer(np.asarray(positions, dtype=np.float64), theta)


def rope_rotate(x: Tensor, positions: npt.ArrayLike) -> Tensor:
  """
  Rotates each pair (x_2i, x_2i+1) at position m by m * theta_i

  `x` is [..., L, d_head]; `positions` has length L.
  """
  if x.ndim < 2:
    raise ShapeError("rope_rotate", x.shape)
  length, head_dim = x.shape[-2], x.shape[-1]
  angles = rope_angles(positions, head_dim)
  if angles.shape[0] != length:
    raise ShapeError("rope_rotate positions", angles.shape, x.shape)
  cos = np.cos(angles).astype(x.dtype)
  sin = np.sin(angles).astype(x.dtype)
  even = x[..., 0::2]
  odd = x[..., 1::2]
  rotated_even = even * cos - odd * sin
  rotated_odd = even * sin + odd * cos
  pairs = ops.concat(
    [
      ops.reshape(rotated_even, rotated_even.shape + (1,)),
      ops.reshape(rotated_odd, rotated_odd.shape + (1,)),
    ],
    axis=-1,
  )
  return ops.reshape(pairs, x.shape)


def _split_heads(x: Tensor, heads: int) -> Tensor:
  batch, length, inner = x.shape
  split = ops.reshape(x, (batch, length, heads, inner // heads))
  return ops.transpose(split, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
  batch, heads, length, head_dim = x.shape
  merged = ops.transpose(x, (0, 2, 1, 3))
  return ops.reshape(merged, (batch, length, heads * head_dim))


def attention(
  x: Tensor,
  key_mask: npt.ArrayLike,
  params: ModelParams,
  prefix: str,
  heads: int,
  rope: bool,
) -> Tensor:
  """
  Multi-head self-attention over [B, L, C]

  Masked keys get a large negative logit. With `rope`, queries and keys
  are rotated by their positions before the dot product.
  """
  batch, length, _ = x.shape
  q = _split_heads(linear(x, params, f"{prefix}.query"), heads)
  k = _split_heads(linear(x, params, f"{prefix}.key"), heads)
  v = _split_heads(linear(x, params, f"{prefix}.value"), heads)
  if rope:
    positions = np.arange(length)
    q = rope_rotate(q, positions)
    k = rope_rotate(k, positions)

  head_dim = q.shape[-1]
  logits = (q @ ops.transpose(k, (0, 1, 3, 2))) / math.sqrt(head_dim)
  valid_keys = np.asarray(key_mask, dtype=bool).reshape(batch, 1, 1, length)
  bias = np.where(valid_keys, 0.0, MASKED_LOGIT).astype(x.dtype)
  weights = ops.softmax(logits + bias, axis=-1)
  return linear(_merge_heads(weights @ v), params, f"{prefix}.out")
