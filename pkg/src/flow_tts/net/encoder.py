"""
Text encoder and duration predictor.

tokens -> embedding -> conv prenet -> RoPE transformer -> mu (per-token
mean acoustic frame). The duration predictor reads a detached copy of the
transformer output, so the duration loss never updates the encoder.
"""

import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from flow_tts.net import layers
from flow_tts.net.config import ModelConfig
from flow_tts.net.layers import Specs
from flow_tts.net.params import ModelParams, ParamSpec
from flow_tts.numerics import ops
from flow_tts.numerics.tensor import ShapeError, Tensor


class OutOfVocabularyError(ValueError):
  token: int
  n_vocab: int

  def __init__(self, token: int, n_vocab: int) -> None:
    self.token = token
    self.n_vocab = n_vocab
    super().__init__(f"token id {token} outside vocabulary of {n_vocab}")


@dataclass(frozen=True)
class EncoderOutput:
  mu: Tensor
  """[B, n_mel, N], zero at padded tokens"""
  log_durations: Tensor
  """[B, N], zero at padded tokens"""
  hidden: Tensor
  """[B, C, N] transformer output"""


def encoder_specs(config: ModelConfig) -> Specs:
  enc = config.encoder
  c = enc.channels
  specs: Specs = {
    "encoder.embedding": ParamSpec((config.n_vocab, c), "embedding")
  }
  for i in range(enc.prenet_layers):
    specs |= layers.conv_specs(
      f"encoder.prenet.{i}.conv", c, c, enc.prenet_kernel
    )
    specs |= layers.norm_specs(f"encoder.prenet.{i}.norm", c)
  specs |= layers.conv_specs("encoder.prenet.proj", c, c, 1, zero=True)
  for i in range(enc.layers):
    prefix = f"encoder.layers.{i}"
    specs |= layers.attention_specs(f"{prefix}.attention", c, c)
    specs |= layers.norm_specs(f"{prefix}.norm1", c)
    specs |= layers.conv_specs(
      f"{prefix}.ffn.conv1", c, enc.filter_channels, enc.kernel_size
    )
    specs |= layers.conv_specs(
      f"{prefix}.ffn.conv2", enc.filter_channels, c, enc.kernel_size
    )
    specs |= layers.norm_specs(f"{prefix}.norm2", c)
  specs |= layers.conv_specs("encoder.proj_mu", c, config.n_mel, 1)

  dc = enc.duration_channels
  specs |= layers.conv_specs("duration.conv1", c, dc, enc.duration_kernel)
  specs |= layers.norm_specs("duration.norm1", dc)
  specs |= layers.conv_specs("duration.conv2", dc, dc, enc.duration_kernel)
  specs |= layers.norm_specs("duration.norm2", dc)
  specs |= layers.conv_specs("duration.proj", dc, 1, 1)
  return specs


def check_vocabulary(tokens: npt.NDArray[np.int64], n_vocab: int) -> None:
  bad = tokens[(tokens < 0) | (tokens >= n_vocab)]
  if bad.size:
    raise OutOfVocabularyError(int(bad[0]), n_vocab)


def _prenet(
  h: Tensor,
  keep: npt.NDArray[np.bool_],
  params: ModelParams,
  config: ModelConfig,
) -> Tensor:
  residual = h
  for i in range(config.encoder.prenet_layers):
    h = layers.conv(ops.where(keep, h), params, f"encoder.prenet.{i}.conv")
    h = layers.channel_layer_norm(h, params, f"encoder.prenet.{i}.norm")
    h = ops.relu(h)
  h = residual + layers.conv(h, params, "encoder.prenet.proj")
  return ops.where(keep, h)


def _transformer_layer(
  h: Tensor,
  keep: npt.NDArray[np.bool_],
  params: ModelParams,
  prefix: str,
  heads: int,
) -> Tensor:
  key_mask = keep[:, 0, :]
  attended = layers.attention(
    ops.transpose(h, (0, 2, 1)),
    key_mask,
    params,
    f"{prefix}.attention",
    heads,
    rope=True,
  )
  h = layers.channel_layer_norm(
    h + ops.transpose(attended, (0, 2, 1)), params, f"{prefix}.norm1"
  )
  ffn = layers.conv(ops.where(keep, h), params, f"{prefix}.ffn.conv1")
  ffn = ops.where(keep, ops.relu(ffn))
  ffn = layers.conv(ffn, params, f"{prefix}.ffn.conv2")
  h = layers.channel_layer_norm(h + ffn, params, f"{prefix}.norm2")
  return ops.where(keep, h)


def duration_predictor(
  hidden: Tensor, keep: npt.NDArray[np.bool_], params: ModelParams
) -> Tensor:
  """[B, C, N] -> log durations [B, N]"""
  h = ops.detach(hidden)
  for i in (1, 2):
    h = layers.conv(ops.where(keep, h), params, f"duration.conv{i}")
    h = layers.channel_layer_norm(ops.relu(h), params, f"duration.norm{i}")
  out = layers.conv(ops.where(keep, h), params, "duration.proj")
  flat = ops.reshape(out, (out.shape[0], out.shape[2]))
  return ops.where(keep[:, 0, :], flat)


def encoder_forward(
  tokens: npt.ArrayLike,
  params: ModelParams,
  config: ModelConfig,
  token_mask: npt.ArrayLike | None = None,
) -> EncoderOutput:
  """
  Token ids [B, N] (or [N]) to per-token means and log-durations

  Padded tokens are ignored by attention and produce zero outputs.
  """
  ids = np.asarray(tokens, dtype=np.int64)
  if ids.ndim == 1:
    ids = ids[None, :]
  if ids.ndim != 2 or ids.shape[1] == 0:
    raise ShapeError("encoder_forward tokens", ids.shape)
  mask = (
    np.ones(ids.shape, dtype=bool)
    if token_mask is None
    else np.asarray(token_mask).reshape(ids.shape) > 0
  )
  check_vocabulary(ids[mask], config.n_vocab)
  safe_ids = np.where(mask, ids, 0)
  keep = mask[:, None, :]

  channels = config.encoder.channels
  embedded = ops.take(params["encoder.embedding"], safe_ids, axis=0)
  h = ops.transpose(embedded * math.sqrt(channels), (0, 2, 1))
  h = _prenet(ops.where(keep, h), keep, params, config)
  for i in range(config.encoder.layers):
    h = _transformer_layer(
      h, keep, params, f"encoder.layers.{i}", config.encoder.heads
    )
  mu = ops.where(keep, layers.conv(h, params, "encoder.proj_mu"))
  return EncoderOutput(
    mu=mu, log_durations=duration_predictor(h, keep, params), hidden=h
  )
