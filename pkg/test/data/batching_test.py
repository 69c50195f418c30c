"""Padding utterances into batches."""

import numpy as np
import pytest

from flow_tts.data.batching import EmptyCorpusError, collate, make_batches
from flow_tts.data.corpus import synth_corpus
from flow_tts.data.vocab import PAD_ID

# Using pytest test functions


def collate_pads_to_maxima_test() -> None:
  corpus = synth_corpus(5, vocab_size=8, n_mel=4, seed=2)
  batch = collate(corpus)
  max_tokens = max(u.n_tokens for u in corpus)
  max_frames = max(u.n_frames for u in corpus)
  assert batch.size == 5
  assert batch.tokens.shape == (5, max_tokens)
  assert batch.frames.shape == (5, 4, max_frames)
  for b, utt in enumerate(corpus):
    assert batch.token_mask[b].sum() == utt.n_tokens
    assert batch.frame_mask[b].sum() == utt.n_frames
    assert np.all(batch.tokens[b, utt.n_tokens :] == PAD_ID)
    assert np.all(batch.frames[b, :, utt.n_frames :] == 0)
    np.testing.assert_array_equal(
      batch.frames[b, :, : utt.n_frames], utt.frames
    )
  assert batch.true_durations is not None
  np.testing.assert_array_equal(
    batch.true_durations.sum(axis=1), batch.frame_lengths
  )


def poisoned_padding_is_nan_test() -> None:
  corpus = synth_corpus(6, vocab_size=8, n_mel=4, seed=2)
  batch = collate(corpus, poison_padding=True)
  valid = np.broadcast_to(batch.frame_mask[:, None, :] > 0, batch.frames.shape)
  assert np.all(np.isfinite(batch.frames[valid]))
  if not np.all(valid):
    assert np.any(np.isnan(batch.frames))


def batches_cover_the_corpus_once_test() -> None:
  corpus = synth_corpus(10, vocab_size=8, n_mel=4, seed=2)
  batches = make_batches(corpus, 4, seed=0)
  assert [b.size for b in batches] == [4, 4, 2]
  ids = [i for b in batches for i in b.ids]
  assert sorted(ids) == sorted(u.id for u in corpus)


def shuffle_depends_on_seed_test() -> None:
  corpus = synth_corpus(10, vocab_size=8, n_mel=4, seed=2)

  def order(seed: int) -> list[str]:
    return [i for b in make_batches(corpus, 10, seed) for i in b.ids]

  assert order(1) == order(1)
  assert order(1) != order(2)


def empty_corpus_test() -> None:
  with pytest.raises(EmptyCorpusError):
    make_batches([], 4, seed=0)
  with pytest.raises(EmptyCorpusError):
    collate([])


def batch_size_must_be_positive_test() -> None:
  with pytest.raises(ValueError):
    make_batches(synth_corpus(2, 8, 4, seed=0), 0, seed=0)
