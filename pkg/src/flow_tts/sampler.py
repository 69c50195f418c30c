"""
Synthesis-time ODE integration.

The prior is zero-mean; `temperature` is its standard deviation. The
vector field is integrated from t = 0 to t = 1 with fixed-step forward
Euler on the left-endpoint grid t_k = k / n, so the number of function
evaluations equals the step count.
"""

import time
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from flow_tts import rng
from flow_tts.cfm import FieldFn
from flow_tts.numerics.tensor import ShapeError, Tensor

DEFAULT_TEMPERATURE = 0.667


@dataclass(frozen=True)
class SolveReport:
  output: Tensor
  nfe: int
  wall_time: float


def sample_prior(
  shape: Sequence[int],
  temperature: float,
  rng_seed: rng.Seed,
  dtype: npt.DTypeLike = np.float32,
) -> Tensor:
  if temperature <= 0:
    raise ValueError(f"temperature must be positive, got {temperature}")
  draw = rng.stream(rng_seed, "prior").standard_normal(tuple(shape))
  return Tensor((temperature * draw).astype(dtype))


def euler_solve(
  x0: Tensor,
  field_fn: FieldFn,
  n_steps: int,
  condition: Tensor,
) -> SolveReport:
  """
  x_{k+1} = x_k + h * field_fn(x_k, t_k, condition), h = 1 / n_steps

  `t_k` is passed as one time per leading (batch) entry of `x0`.
  """
  if n_steps < 1:
    raise ValueError(f"n_steps must be at least 1, got {n_steps}")
  started = time.perf_counter()
  h = 1.0 / n_steps
  batch = x0.shape[0] if x0.ndim > 0 else 1
  x = x0
  nfe = 0
  for k in range(n_steps):
    t = np.full(batch, k * h, dtype=x0.dtype)
    velocity = field_fn(x, t, condition)
    nfe += 1
    if velocity.shape != x.shape:
      raise ShapeError("euler_solve field output", velocity.shape, x.shape)
    x = Tensor(x.data + h * velocity.data)
  return SolveReport(
    output=x, nfe=nfe, wall_time=time.perf_counter() - started
  )
