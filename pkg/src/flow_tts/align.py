"""
Monotonic alignment between token-level Gaussians and acoustic frames,
plus the alignment-driven losses and duration upsampling.

Alignment search is a dynamic program over the log-likelihood matrix
(tokens x frames):

    Q[i, j] = L[i, j] + max(Q[i - 1, j - 1], Q[i, j - 1])

and the path is recovered by backtracking from the last token at the last
frame. The path is a constant for gradient purposes.
"""

import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from flow_tts.numerics import ops
from flow_tts.numerics.tensor import Array, ShapeError, Tensor

LOG_2PI = math.log(2 * math.pi)
DURATION_EPS = 1e-8


class AlignmentError(ValueError):
  """No monotonic surjective alignment exists (fewer frames than tokens)."""


@dataclass(frozen=True)
class AlignmentPath:
  frame_to_token: npt.NDArray[np.int64]

  def __post_init__(self) -> None:
    path = self.frame_to_token
    if path.ndim != 1 or path.size == 0:
      raise AlignmentError("alignment path must be a non-empty vector")
    steps = np.diff(path)
    if path[0] != 0 or np.any((steps != 0) & (steps != 1)):
      raise AlignmentError(f"path is not monotonic from token 0: {path}")

  @property
  def n_frames(self) -> int:
    return int(self.frame_to_token.size)

  @property
  def n_tokens(self) -> int:
    return int(self.frame_to_token[-1]) + 1


def _as_array(x: Tensor | npt.ArrayLike) -> Array:
  return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def log_prior_matrix(
  frames: Tensor | npt.ArrayLike, mu_tokens: Tensor | npt.ArrayLike
) -> Tensor:
  """
  Entry (i, j) = log N(frame_j; mu_i, I)
               = -1/2 sum_c [(y_cj - mu_ci)^2 + log 2 pi]

  `frames` is [n_mel, T], `mu_tokens` is [n_mel, N]; the result [N, T]
  is a constant.
  """
  y = _as_array(frames).astype(np.float64)
  mu = _as_array(mu_tokens).astype(np.float64)
  if y.ndim != 2 or mu.ndim != 2 or y.shape[0] != mu.shape[0]:
    raise ShapeError("log_prior_matrix", y.shape, mu.shape)
  n_mel = y.shape[0]
  # ||y - mu||^2 = ||y||^2 - 2 mu^T y + ||mu||^2
  quadratic = (
    np.sum(y * y, axis=0)[None, :]
    - 2.0 * (mu.T @ y)
    + np.sum(mu * mu, axis=0)[:, None]
  )
  return Tensor(-0.5 * (quadratic + n_mel * LOG_2PI))


def mas(log_lik: Tensor | npt.ArrayLike) -> AlignmentPath:
  """
  Maximum-likelihood monotonic surjective path through `log_lik` [N, T]

  Ties in the recurrence prefer the diagonal move (advancing the token).
  """
  values = _as_array(log_lik).astype(np.float64)
  if values.ndim != 2:
    raise ShapeError("mas", values.shape)
  n_tokens, n_frames = values.shape
  if n_tokens < 1 or n_frames < n_tokens:
    raise AlignmentError(
      f"cannot align {n_tokens} tokens to {n_frames} frames"
    )
  if not np.all(np.isfinite(values)):
    raise AlignmentError("log-likelihood matrix has non-finite entries")

  q = np.full((n_tokens, n_frames), -np.inf)
  q[0, 0] = values[0, 0]
  for j in range(1, n_frames):
    stay = q[:, j - 1]
    advance = np.concatenate(([-np.inf], q[:-1, j - 1]))
    q[:, j] = values[:, j] + np.maximum(stay, advance)

  path = np.empty(n_frames, dtype=np.int64)
  i = n_tokens - 1
  for j in range(n_frames - 1, 0, -1):
    path[j] = i
    if i > 0 and (i == j or q[i - 1, j - 1] >= q[i, j - 1]):
      i -= 1
  path[0] = i
  return AlignmentPath(path)


def path_score(log_lik: Tensor | npt.ArrayLike, path: AlignmentPath) -> float:
  values = _as_array(log_lik)
  frames = np.arange(path.n_frames)
  return float(np.sum(values[path.frame_to_token, frames]))


@dataclass(frozen=True)
class Durations:
  d: npt.NDArray[np.int64]

  def __post_init__(self) -> None:
    if self.d.ndim != 1 or np.any(self.d < 1):
      raise ValueError(f"durations must be positive integers, got {self.d}")

  @property
  def total(self) -> int:
    return int(np.sum(self.d))


def durations_from_path(path: AlignmentPath) -> Durations:
  counts = np.bincount(path.frame_to_token, minlength=path.n_tokens)
  return Durations(counts.astype(np.int64))


def path_from_durations(d: Durations) -> AlignmentPath:
  return AlignmentPath(np.repeat(np.arange(d.d.size), d.d).astype(np.int64))


def round_up_durations(
  predicted: npt.ArrayLike, length_scale: float = 1.0
) -> Durations:
  """
  Real-valued durations to frame counts: ceil(d * length_scale), at least 1
  """
  scaled = np.asarray(predicted, dtype=np.float64) * length_scale
  return Durations(np.maximum(np.ceil(scaled), 1).astype(np.int64))


def upsample_by_durations(
  token_vectors: Tensor, d: Durations | npt.ArrayLike
) -> Tensor:
  """
  [C, N] -> [C, sum(d)]: column i repeated d[i] times, in order
  """
  durations = d if isinstance(d, Durations) else Durations(np.asarray(d))
  if token_vectors.ndim != 2 or token_vectors.shape[1] != durations.d.size:
    raise ShapeError(
      "upsample_by_durations", token_vectors.shape, durations.d.shape
    )
  index = path_from_durations(durations).frame_to_token
  return ops.take(token_vectors, index, axis=1)


def _mask_keep(mask: npt.ArrayLike, shape: tuple[int, ...]) -> Array:
  keep = np.asarray(mask) > 0
  if keep.ndim == len(shape) - 1:
    keep = np.expand_dims(keep, axis=-2)
  try:
    _ = np.broadcast_shapes(keep.shape, shape)
  except ValueError:
    raise ShapeError("mask", keep.shape, shape) from None
  return keep


def prior_loss(
  frames: Tensor | npt.ArrayLike,
  mu_frames_aligned: Tensor,
  mask: npt.ArrayLike,
) -> Tensor:
  """
  Negative Gaussian log-density (identity covariance) averaged over valid
  frame-elements

  `frames` and `mu_frames_aligned` are [..., n_mel, T]; `mask` is
  [..., T] (or already broadcastable).
  """
  y = frames if isinstance(frames, Tensor) else Tensor(frames)
  if y.shape != mu_frames_aligned.shape:
    raise ShapeError("prior_loss", y.shape, mu_frames_aligned.shape)
  keep = _mask_keep(mask, y.shape)
  count = int(np.count_nonzero(np.broadcast_to(keep, y.shape)))
  if count == 0:
    raise ValueError("prior_loss: mask selects no frames")
  residual = ops.where(keep, y) - mu_frames_aligned
  per_element = 0.5 * (residual * residual + LOG_2PI)
  return ops.sum(ops.where(keep, per_element)) / count


def duration_loss(
  predicted_log_d: Tensor,
  target_d: Durations | npt.ArrayLike,
  mask: npt.ArrayLike,
) -> Tensor:
  """
  Mean over valid tokens of (predicted_log_d - log(target + eps))^2
  """
  target = target_d.d if isinstance(target_d, Durations) else target_d
  target_array = np.asarray(target, dtype=np.float64)
  keep = np.asarray(mask) > 0
  shapes = {predicted_log_d.shape, target_array.shape, keep.shape}
  if len(shapes) != 1:
    raise ShapeError(
      "duration_loss", predicted_log_d.shape, target_array.shape, keep.shape
    )
  count = int(np.count_nonzero(keep))
  if count == 0:
    raise ValueError("duration_loss: mask selects no tokens")
  log_target = np.log(np.where(keep, target_array, 1.0) + DURATION_EPS)
  residual = predicted_log_d - log_target.astype(predicted_log_d.dtype)
  return ops.sum(ops.where(keep, residual * residual)) / count


def format_alignment(path: AlignmentPath) -> str:
  """One "frame_index token_index" line per frame."""
  return "".join(
    f"{frame} {token}\n" for frame, token in enumerate(path.frame_to_token)
  )
