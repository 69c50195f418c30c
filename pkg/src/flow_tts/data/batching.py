"""
Padding utterances into fixed-shape batches.

Token and frame tensors are padded to the per-batch maxima. Masks are
0/1 floats and padded positions hold zeros, or NaN when padding is
poisoned to prove that no loss reads them.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from flow_tts import rng
from flow_tts.data.corpus import Utterance
from flow_tts.data.vocab import PAD_ID
from flow_tts.utils.listutils import sized_chunk


class EmptyCorpusError(ValueError):
  def __init__(self) -> None:
    super().__init__("cannot batch an empty corpus")


@dataclass(frozen=True)
class Batch:
  ids: tuple[str, ...]
  tokens: npt.NDArray[np.int64]
  """[B, N] padded with PAD_ID"""
  token_mask: npt.NDArray[np.float32]
  """[B, N]"""
  frames: npt.NDArray[np.float32]
  """[B, n_mel, T]"""
  frame_mask: npt.NDArray[np.float32]
  """[B, T]"""
  token_lengths: npt.NDArray[np.int64]
  frame_lengths: npt.NDArray[np.int64]
  true_durations: npt.NDArray[np.int64] | None = None
  """[B, N] zero-padded, when every utterance carries ground truth"""

  @property
  def size(self) -> int:
    return len(self.ids)


def collate(
  utterances: Sequence[Utterance], poison_padding: bool = False
) -> Batch:
  if not utterances:
    raise EmptyCorpusError()
  n_mel = utterances[0].n_mel
  if any(u.n_mel != n_mel for u in utterances):
    raise ValueError("utterances in a batch must share n_mel")
  batch = len(utterances)
  max_tokens = max(u.n_tokens for u in utterances)
  max_frames = max(u.n_frames for u in utterances)
  fill = np.nan if poison_padding else 0.0

  tokens = np.full((batch, max_tokens), PAD_ID, dtype=np.int64)
  token_mask = np.zeros((batch, max_tokens), dtype=np.float32)
  frames = np.full((batch, n_mel, max_frames), fill, dtype=np.float32)
  frame_mask = np.zeros((batch, max_frames), dtype=np.float32)
  known = all(u.true_durations is not None for u in utterances)
  durations = np.zeros((batch, max_tokens), dtype=np.int64)

  for b, utt in enumerate(utterances):
    tokens[b, : utt.n_tokens] = utt.tokens
    token_mask[b, : utt.n_tokens] = 1.0
    frames[b, :, : utt.n_frames] = utt.frames
    frame_mask[b, : utt.n_frames] = 1.0
    if utt.true_durations is not None:
      durations[b, : utt.n_tokens] = utt.true_durations.d

  return Batch(
    ids=tuple(u.id for u in utterances),
    tokens=tokens,
    token_mask=token_mask,
    frames=frames,
    frame_mask=frame_mask,
    token_lengths=np.array([u.n_tokens for u in utterances], dtype=np.int64),
    frame_lengths=np.array([u.n_frames for u in utterances], dtype=np.int64),
    true_durations=durations if known else None,
  )


def make_batches(
  utterances: Sequence[Utterance],
  batch_size: int,
  seed: rng.Seed,
  poison_padding: bool = False,
) -> list[Batch]:
  """
  Shuffles with the "shuffle" stream of `seed` and cuts consecutive
  batches; only the last may be short

  Pass `rng.derive(seed, epoch)` for a fresh order each epoch.
  """
  if not utterances:
    raise EmptyCorpusError()
  if batch_size < 1:
    raise ValueError(f"batch_size must be at least 1, got {batch_size}")
  order = rng.stream(seed, "shuffle").permutation(len(utterances))
  shuffled = [utterances[int(i)] for i in order]
  return [
    collate(chunk, poison_padding)
    for chunk in sized_chunk(batch_size, shuffled)
  ]
