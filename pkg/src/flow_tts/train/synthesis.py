"""
Text to acoustic frames.

tokenize -> encoder -> durations ceil(exp(log d) * length_scale) ->
upsampled means -> prior draw -> Euler solve with the decoder field.
"""

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from flow_tts import rng
from flow_tts.align import Durations, round_up_durations, upsample_by_durations
from flow_tts.data.tensor_file import F32Array
from flow_tts.data.vocab import DEFAULT_VOCAB, EmptyText, Vocab, tokenize
from flow_tts.net.config import ModelConfig
from flow_tts.net.decoder import decoder_field
from flow_tts.net.encoder import encoder_forward
from flow_tts.net.params import ModelParams
from flow_tts.numerics import ops
from flow_tts.sampler import (
  DEFAULT_TEMPERATURE,
  euler_solve,
  sample_prior,
)
from flow_tts.utils.result import Err, Ok, Result

logger = logging.getLogger("Synthesizer")


@dataclass(frozen=True)
class Synthesis:
  frames: F32Array
  """[n_mel, sum(durations)]"""
  durations: Durations
  nfe: int
  wall_time: float

  @property
  def n_frames(self) -> int:
    return int(self.frames.shape[1])


def synthesize_tokens(
  tokens: npt.ArrayLike,
  params: ModelParams,
  config: ModelConfig,
  n_steps: int,
  temperature: float = DEFAULT_TEMPERATURE,
  seed: rng.Seed = 0,
  length_scale: float = 1.0,
) -> Synthesis:
  if n_steps < 1:
    raise ValueError(f"n_steps must be at least 1, got {n_steps}")
  if temperature <= 0:
    raise ValueError(f"temperature must be positive, got {temperature}")
  if length_scale <= 0:
    raise ValueError(f"length_scale must be positive, got {length_scale}")

  ids = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
  encoded = encoder_forward(ids, params, config)
  durations = round_up_durations(
    np.exp(encoded.log_durations.data[0].astype(np.float64)), length_scale
  )
  mu = upsample_by_durations(encoded.mu[0], durations)
  condition = ops.reshape(mu, (1,) + mu.shape)
  x0 = sample_prior(condition.shape, temperature, seed, dtype=mu.dtype)
  report = euler_solve(x0, decoder_field(params, config), n_steps, condition)
  logger.debug(
    f"{ids.shape[1]} tokens -> {durations.total} frames, "
    f"{report.nfe} evaluations in {report.wall_time:.3f}s"
  )
  return Synthesis(
    frames=report.output.data[0].astype(np.float32),
    durations=durations,
    nfe=report.nfe,
    wall_time=report.wall_time,
  )


def synthesize(
  text: str,
  params: ModelParams,
  config: ModelConfig,
  n_steps: int,
  temperature: float = DEFAULT_TEMPERATURE,
  seed: rng.Seed = 0,
  length_scale: float = 1.0,
  vocab: Vocab = DEFAULT_VOCAB,
) -> Result[Synthesis, EmptyText]:
  """
  Frames for `text`; an empty string is an `Err`, bad numeric settings
  raise `ValueError`
  """
  match tokenize(text, vocab):
    case Ok(tokens):
      return Ok(
        synthesize_tokens(
          tokens, params, config, n_steps, temperature, seed, length_scale
        )
      )
    case Err(error):
      return Err(error)
