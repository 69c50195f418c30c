"""
Vector-field network: a 1D U-Net of residual blocks, each followed by a
transformer block without position embeddings.

Input channels are [x_t; mu]. Each down stage halves the frame rate with
a stride-2 conv; each up stage doubles it with nearest-neighbour
repetition plus a conv and concatenates the matching skip. Lengths are
right-padded to a multiple of 2^n_down and cropped at the end.
"""

import math

import numpy as np
import numpy.typing as npt

from flow_tts.cfm import FieldFn, FlowTime
from flow_tts.net import layers
from flow_tts.net.config import ModelConfig
from flow_tts.net.layers import Specs
from flow_tts.net.params import ModelParams
from flow_tts.numerics import ops
from flow_tts.numerics.tensor import Array, ShapeError, Tensor

TIME_SCALE = 1000.0

type Keep = npt.NDArray[np.bool_]


# Time embedding


def sinusoidal_embedding(t: FlowTime, dim: int) -> Array:
  """
  [B] times -> [B, dim]: sin components then cos components

  Times are scaled by 1000 so that t in [0, 1] spans the frequencies.
  """
  if dim % 2 != 0 or dim < 2:
    raise ValueError(f"time embedding dimension must be even, got {dim}")
  times = np.atleast_1d(np.asarray(t, dtype=np.float64))
  half = dim // 2
  freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
  args = TIME_SCALE * times[:, None] * freqs[None, :]
  return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def time_embed(
  t: FlowTime, params: ModelParams, config: ModelConfig
) -> Tensor:
  """Sinusoidal embedding followed by linear -> SiLU -> linear."""
  dtype = params["decoder.time.fc1.weight"].dtype
  sinusoid = Tensor(
    sinusoidal_embedding(t, config.decoder.time_sin_dim).astype(dtype)
  )
  h = layers.silu(layers.linear(sinusoid, params, "decoder.time.fc1"))
  return layers.linear(h, params, "decoder.time.fc2")


# Parameter registration


def _resnet_specs(
  prefix: str, c_in: int, c_out: int, time_dim: int
) -> Specs:
  return (
    layers.conv_specs(f"{prefix}.conv1", c_in, c_out, 3)
    | layers.norm_specs(f"{prefix}.norm1", c_out)
    | layers.snake_specs(f"{prefix}.act1", c_out)
    | layers.linear_specs(f"{prefix}.time", time_dim, c_out)
    | layers.conv_specs(f"{prefix}.conv2", c_out, c_out, 3)
    | layers.norm_specs(f"{prefix}.norm2", c_out)
    | layers.snake_specs(f"{prefix}.act2", c_out)
    | layers.conv_specs(f"{prefix}.residual", c_in, c_out, 1)
  )


def _transformer_specs(
  prefix: str, channels: int, inner: int, ff: int
) -> Specs:
  return (
    layers.norm_specs(f"{prefix}.norm1", channels)
    | layers.attention_specs(f"{prefix}.attention", channels, inner)
    | layers.norm_specs(f"{prefix}.norm2", channels)
    | layers.linear_specs(f"{prefix}.ff.fc1", channels, ff)
    | layers.snake_specs(f"{prefix}.ff.act", ff)
    | layers.linear_specs(f"{prefix}.ff.fc2", ff, channels)
  )


def decoder_specs(config: ModelConfig) -> Specs:
  dec = config.decoder
  hidden = dec.hidden
  ff = dec.ff_mult * hidden
  specs = layers.linear_specs(
    "decoder.time.fc1", dec.time_sin_dim, dec.time_dim
  ) | layers.linear_specs("decoder.time.fc2", dec.time_dim, dec.time_dim)

  def stage(prefix: str, c_in: int) -> Specs:
    return _resnet_specs(
      f"{prefix}.res", c_in, hidden, dec.time_dim
    ) | _transformer_specs(f"{prefix}.tf", hidden, dec.inner_dim, ff)

  for i in range(dec.n_down):
    c_in = 2 * config.n_mel if i == 0 else hidden
    specs |= stage(f"decoder.down.{i}", c_in)
    specs |= layers.conv_specs(
      f"decoder.down.{i}.downsample", hidden, hidden, 3
    )
  for i in range(dec.n_mid):
    specs |= stage(f"decoder.mid.{i}", hidden)
  for i in range(dec.n_up):
    specs |= layers.conv_specs(
      f"decoder.up.{i}.upsample", hidden, hidden, 3
    )
    specs |= stage(f"decoder.up.{i}", 2 * hidden)
  specs |= layers.conv_specs("decoder.final.conv", hidden, hidden, 3)
  specs |= layers.norm_specs("decoder.final.norm", hidden)
  specs |= layers.snake_specs("decoder.final.act", hidden)
  specs |= layers.conv_specs("decoder.final.proj", hidden, config.n_mel, 1)
  return specs


# Blocks


def _conv_block(
  x: Tensor,
  keep: Keep,
  params: ModelParams,
  prefix: str,
  suffix: str,
  groups: int,
) -> Tensor:
  h = layers.conv(ops.where(keep, x), params, f"{prefix}.conv{suffix}")
  h = layers.masked_group_norm(
    h, keep, groups, params, f"{prefix}.norm{suffix}"
  )
  h = layers.snake(h, params, f"{prefix}.act{suffix}")
  return ops.where(keep, h)


def resnet_block(
  x: Tensor,
  keep: Keep,
  temb: Tensor,
  params: ModelParams,
  prefix: str,
  groups: int,
) -> Tensor:
  """
  conv-norm-snake twice, the projected time embedding added in between,
  plus a 1x1 residual path
  """
  h = _conv_block(x, keep, params, prefix, "1", groups)
  shift = layers.linear(layers.silu(temb), params, f"{prefix}.time")
  h = h + ops.reshape(shift, shift.shape + (1,))
  h = _conv_block(h, keep, params, prefix, "2", groups)
  return h + layers.conv(ops.where(keep, x), params, f"{prefix}.residual")


def transformer_block(
  x: Tensor,
  keep: Keep,
  params: ModelParams,
  prefix: str,
  heads: int,
) -> Tensor:
  """Pre-norm self-attention and snake-beta feedforward over [B, C, T]."""
  h = ops.transpose(x, (0, 2, 1))
  key_mask = keep[:, 0, :]
  normed = layers.channel_layer_norm(h, params, f"{prefix}.norm1", axis=-1)
  h = h + layers.attention(
    normed, key_mask, params, f"{prefix}.attention", heads, rope=False
  )
  normed = layers.channel_layer_norm(h, params, f"{prefix}.norm2", axis=-1)
  ff = layers.linear(normed, params, f"{prefix}.ff.fc1")
  ff = layers.snake(ff, params, f"{prefix}.ff.act", channel_axis=-1)
  h = h + layers.linear(ff, params, f"{prefix}.ff.fc2")
  return ops.where(keep, ops.transpose(h, (0, 2, 1)))


def _stage(
  h: Tensor,
  keep: Keep,
  temb: Tensor,
  params: ModelParams,
  prefix: str,
  config: ModelConfig,
) -> Tensor:
  dec = config.decoder
  h = resnet_block(h, keep, temb, params, f"{prefix}.res", dec.groups)
  return transformer_block(h, keep, params, f"{prefix}.tf", dec.heads)


def _pad_time(x: Tensor, extra: int) -> Tensor:
  if extra == 0:
    return x
  zeros = Tensor(np.zeros(x.shape[:-1] + (extra,), dtype=x.dtype))
  return ops.concat([x, zeros], axis=-1)


def decoder_forward(
  x_t: Tensor,
  mu: Tensor,
  t: FlowTime,
  params: ModelParams,
  config: ModelConfig,
  mask: npt.ArrayLike | None = None,
) -> Tensor:
  """
  Predicted vector field v_t(x_t | mu), the same shape as `x_t`

  `x_t` and `mu` are [B, n_mel, T] (or [n_mel, T]); `t` is a scalar or
  one time per batch item; `mask` is [B, T].
  """
  squeeze = x_t.ndim == 2
  if squeeze:
    x_t = ops.reshape(x_t, (1,) + x_t.shape)
    mu = ops.reshape(mu, (1,) + mu.shape)
  if x_t.shape != mu.shape or x_t.ndim != 3 or x_t.shape[1] != config.n_mel:
    raise ShapeError("decoder_forward", x_t.shape, mu.shape)
  batch, _, length = x_t.shape
  if length < 1:
    raise ShapeError("decoder_forward (empty time axis)", x_t.shape)
  frames = (
    np.ones((batch, length), dtype=bool)
    if mask is None
    else np.asarray(mask).reshape(batch, length) > 0
  )

  dec = config.decoder
  padded = -(-length // dec.length_multiple) * dec.length_multiple
  extra = padded - length
  keep = np.pad(frames, ((0, 0), (0, extra)))[:, None, :]
  times = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
  temb = time_embed(times, params, config)

  h = ops.concat([_pad_time(x_t, extra), _pad_time(mu, extra)], axis=1)
  skips: list[tuple[Tensor, Keep]] = []
  for i in range(dec.n_down):
    h = _stage(h, keep, temb, params, f"decoder.down.{i}", config)
    skips.append((h, keep))
    h = layers.conv(h, params, f"decoder.down.{i}.downsample", stride=2)
    keep = keep[:, :, ::2]
    h = ops.where(keep, h)
  for i in range(dec.n_mid):
    h = _stage(h, keep, temb, params, f"decoder.mid.{i}", config)
  for i in range(dec.n_up):
    skip, keep = skips.pop()
    repeated = ops.take(h, np.arange(skip.shape[2]) // 2, axis=2)
    h = layers.conv(repeated, params, f"decoder.up.{i}.upsample")
    h = ops.concat([ops.where(keep, h), skip], axis=1)
    h = _stage(h, keep, temb, params, f"decoder.up.{i}", config)

  h = _conv_block(h, keep, params, "decoder.final", "", dec.groups)
  out = ops.where(keep, layers.conv(h, params, "decoder.final.proj"))
  out = out[:, :, :length]
  return ops.reshape(out, out.shape[1:]) if squeeze else out


def decoder_field(
  params: ModelParams, config: ModelConfig, mask: npt.ArrayLike | None = None
) -> FieldFn:
  """The decoder as a `field_fn(x_t, t, mu)` for losses and solvers."""

  def field(x_t: Tensor, t: Array, mu: Tensor) -> Tensor:
    return decoder_forward(x_t, mu, t, params, config, mask)

  return field
