"""
Optimal-transport conditional flow matching.

Each datum x1 is paired with a draw x0 ~ N(0, I). The conditional flow
moves x0 to x1 along a straight line that ends at sigma_min * x0 + x1,
and its time derivative is the constant target field regressed by the
decoder. The marginal flow-matching objective is never evaluated; the
conditional one shares its gradients.
"""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from flow_tts import rng
from flow_tts.numerics import ops
from flow_tts.numerics.tensor import Array, ShapeError, Tensor

type FlowTime = float | Array
type FieldFn = Callable[[Tensor, Array, Tensor], Tensor]

DEFAULT_SIGMA_MIN = 1e-4


class OtCfmConfig(BaseModel):
  model_config = ConfigDict(frozen=True, extra="forbid")

  sigma_min: float = Field(default=DEFAULT_SIGMA_MIN, ge=0.0, lt=1.0)


@dataclass(frozen=True)
class PathSample:
  """One point on each item's conditional path and the field there."""

  t: Array
  x0: Tensor
  x_t: Tensor
  u_t: Tensor


def _as_tensor(x: Tensor | npt.ArrayLike) -> Tensor:
  return x if isinstance(x, Tensor) else Tensor(x)


def _time_factor(t: FlowTime, like: Tensor) -> Tensor:
  """Per-item times [B] broadcast against [B, ...]; scalars as-is."""
  times = np.asarray(t, dtype=like.dtype)
  if np.any(times < 0) or np.any(times > 1):
    raise ValueError(f"flow time must lie in [0, 1], got {t}")
  if times.ndim == 1 and like.ndim > 1:
    if times.shape[0] != like.shape[0]:
      raise ShapeError("flow time", times.shape, like.shape)
    times = times.reshape((-1,) + (1,) * (like.ndim - 1))
  return Tensor(times)


def ot_flow_point(
  x0: Tensor | npt.ArrayLike,
  x1: Tensor | npt.ArrayLike,
  t: FlowTime,
  cfg: OtCfmConfig = OtCfmConfig(),
) -> Tensor:
  """
  (1 - (1 - sigma_min) t) x0 + t x1

  The x0 coefficient is evaluated as (1 - t) + sigma_min t, which is
  exactly 1 at t = 0 and exactly sigma_min at t = 1.
  """
  a, b = _as_tensor(x0), _as_tensor(x1)
  if a.shape != b.shape:
    raise ShapeError("ot_flow_point", a.shape, b.shape)
  time = _time_factor(t, a)
  coefficient = (1.0 - time) + cfg.sigma_min * time
  return coefficient * a + time * b


def ot_target_field(
  x0: Tensor | npt.ArrayLike,
  x1: Tensor | npt.ArrayLike,
  cfg: OtCfmConfig = OtCfmConfig(),
) -> Tensor:
  """x1 - (1 - sigma_min) x0, the same for every t."""
  a, b = _as_tensor(x0), _as_tensor(x1)
  if a.shape != b.shape:
    raise ShapeError("ot_target_field", a.shape, b.shape)
  return b - (1.0 - cfg.sigma_min) * a


def _frame_mask(mask: npt.ArrayLike, x1: Tensor) -> Array:
  frames = np.asarray(mask)
  if x1.ndim != 3 or frames.shape != (x1.shape[0], x1.shape[2]):
    raise ShapeError("frame mask", frames.shape, x1.shape)
  return frames[:, None, :] > 0


def sample_path(
  x1_batch: Tensor | npt.ArrayLike,
  mask: npt.ArrayLike,
  cfg: OtCfmConfig,
  rng_seed: rng.Seed,
) -> PathSample:
  """
  Draws t ~ U[0, 1] and x0 ~ N(0, I) once per batch item

  Times and noise come from separate named streams of `rng_seed`.
  Padded frames of x_t and u_t are zero.
  """
  x1 = _as_tensor(x1_batch)
  keep = _frame_mask(mask, x1)
  batch = x1.shape[0]
  t = rng.stream(rng_seed, "flow-time").uniform(0.0, 1.0, size=batch)
  noise = rng.stream(rng_seed, "flow-noise").standard_normal(x1.shape)
  x0 = Tensor(noise.astype(x1.dtype))
  clean_x1 = ops.where(keep, x1)
  x_t = ops.where(keep, ot_flow_point(x0, clean_x1, t.astype(x1.dtype), cfg))
  u_t = ops.where(keep, ot_target_field(x0, clean_x1, cfg))
  return PathSample(t=t.astype(x1.dtype), x0=x0, x_t=x_t, u_t=u_t)


def masked_mean_square(
  residual: Tensor, keep: npt.ArrayLike, count: float
) -> Tensor:
  squared = ops.where(keep, residual * residual)
  return ops.sum(squared) / count


def cfm_loss(
  x1_batch: Tensor | npt.ArrayLike,
  mu_batch: Tensor,
  mask: npt.ArrayLike,
  field_fn: FieldFn,
  rng_seed: rng.Seed,
  cfg: OtCfmConfig = OtCfmConfig(),
) -> Tensor:
  """
  Mean over valid frame-elements of ||u_t - v_t(x_t | mu)||^2

  `field_fn(x_t, t, mu)` is the vector-field network; the loss is
  differentiable with respect to whatever it closes over.
  """
  x1 = _as_tensor(x1_batch)
  if mu_batch.shape != x1.shape:
    raise ShapeError("cfm_loss", x1.shape, mu_batch.shape)
  keep = _frame_mask(mask, x1)
  valid = int(np.count_nonzero(keep))
  if valid == 0:
    raise ValueError("cfm_loss: mask selects no frames")

  path = sample_path(x1, mask, cfg, rng_seed)
  predicted = field_fn(path.x_t, path.t, mu_batch)
  if predicted.shape != x1.shape:
    raise ShapeError("cfm_loss field output", predicted.shape, x1.shape)
  return masked_mean_square(predicted - path.u_t, keep, valid * x1.shape[1])
