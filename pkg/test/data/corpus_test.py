"""Synthetic corpus generation and the manifest path."""

import json
from pathlib import Path

import numpy as np
import pytest

from flow_tts.data.corpus import (
  MAX_DURATION,
  MAX_TOKENS,
  MIN_DURATION,
  MIN_TOKENS,
  BadFrames,
  BadManifestLine,
  ManifestUnreadable,
  export_corpus,
  load_manifest,
  random_tokens,
  read_manifest,
  synth_corpus,
)
from flow_tts.data.tensor_file import write_tensor_file
from flow_tts.data.vocab import FIRST_SYMBOL_ID, tokenize
from flow_tts.utils.result import Err, Ok, expect

# Using pytest test functions


def synthetic_utterances_test() -> None:
  corpus = synth_corpus(20, vocab_size=10, n_mel=6, seed=0)
  assert len(corpus) == 20
  assert len({u.id for u in corpus}) == 20
  for utt in corpus:
    assert MIN_TOKENS <= utt.n_tokens <= MAX_TOKENS
    assert utt.true_durations is not None
    d = utt.true_durations.d
    assert np.all((d >= MIN_DURATION) & (d <= MAX_DURATION))
    assert utt.n_frames == d.sum()
    assert utt.frames.shape == (6, utt.n_frames)
    assert utt.frames.dtype == np.float32
    np.testing.assert_array_equal(expect(tokenize(utt.text)), utt.tokens)


def synthetic_frames_follow_the_alignment_test() -> None:
  """Frames of one token sit close to each other, away from neighbors."""
  utt = synth_corpus(1, vocab_size=12, n_mel=16, seed=3)[0]
  assert utt.true_durations is not None
  bounds = np.cumsum(utt.true_durations.d)
  first = utt.frames[:, : bounds[0]]
  second = utt.frames[:, bounds[0] : bounds[1]]
  assert np.abs(first - first[:, :1]).max() < 1.0
  assert np.linalg.norm(first.mean(axis=1) - second.mean(axis=1)) > 1.0


def synthetic_corpus_is_reproducible_test() -> None:
  a = synth_corpus(5, 8, 4, seed=9)
  b = synth_corpus(5, 8, 4, seed=9)
  c = synth_corpus(5, 8, 4, seed=10)
  assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a, b))
  assert not all(
    x.frames.shape == y.frames.shape and np.array_equal(x.frames, y.frames)
    for x, y in zip(a, c)
  )


def random_tokens_avoid_repeats_test() -> None:
  tokens = random_tokens(200, 5, np.random.default_rng(0))
  assert np.all(tokens >= FIRST_SYMBOL_ID)
  assert np.all(tokens < 5)
  assert np.all(tokens[1:] != tokens[:-1])


def random_tokens_need_symbols_test() -> None:
  with pytest.raises(ValueError):
    random_tokens(3, FIRST_SYMBOL_ID, np.random.default_rng(0))


def export_then_load_test(tmp_path: Path) -> None:
  corpus = synth_corpus(4, vocab_size=8, n_mel=5, seed=1)
  manifest = export_corpus(corpus, tmp_path / "corpus")
  loaded = expect(load_manifest(manifest, n_mel=5))
  assert [u.id for u in loaded] == [u.id for u in corpus]
  for original, back in zip(corpus, loaded):
    np.testing.assert_array_equal(back.frames, original.frames)
    np.testing.assert_array_equal(back.tokens, original.tokens)
    assert back.true_durations is not None
    assert original.true_durations is not None
    np.testing.assert_array_equal(
      back.true_durations.d, original.true_durations.d
    )


def missing_manifest_test(tmp_path: Path) -> None:
  match load_manifest(tmp_path / "nope.jsonl"):
    case Err(ManifestUnreadable()):
      pass
    case other:
      raise AssertionError(f"unexpected {other!r}")


def bad_line_is_numbered_test(tmp_path: Path) -> None:
  manifest = tmp_path / "manifest.jsonl"
  manifest.write_text(
    json.dumps({"id": "a", "text": "ab", "frames": "a.mtf"})
    + "\n\n{not json\n"
  )
  match read_manifest(manifest):
    case Err(BadManifestLine(line=3)):
      pass
    case other:
      raise AssertionError(f"unexpected {other!r}")


def unknown_manifest_key_test(tmp_path: Path) -> None:
  manifest = tmp_path / "manifest.jsonl"
  manifest.write_text(
    json.dumps({"id": "a", "text": "ab", "frames": "a.mtf", "x": 1}) + "\n"
  )
  match read_manifest(manifest):
    case Err(BadManifestLine(line=1)):
      pass
    case other:
      raise AssertionError(f"unexpected {other!r}")


def too_few_frames_test(tmp_path: Path) -> None:
  """An utterance with fewer frames than tokens cannot be aligned."""
  write_tensor_file(tmp_path / "short.mtf", np.zeros((3, 2)))
  manifest = tmp_path / "manifest.jsonl"
  manifest.write_text(
    json.dumps({"id": "short", "text": "abcd", "frames": "short.mtf"}) + "\n"
  )
  match load_manifest(manifest):
    case Err(BadFrames(id="short") as error):
      assert "cannot cover" in error.message
    case other:
      raise AssertionError(f"unexpected {other!r}")


def wrong_mel_count_test(tmp_path: Path) -> None:
  write_tensor_file(tmp_path / "u.mtf", np.zeros((3, 8)))
  manifest = tmp_path / "manifest.jsonl"
  manifest.write_text(
    json.dumps({"id": "u", "text": "abc", "frames": "u.mtf"}) + "\n"
  )
  assert isinstance(load_manifest(manifest, n_mel=3), Ok)
  match load_manifest(manifest, n_mel=4):
    case Err(BadFrames(id="u")):
      pass
    case other:
      raise AssertionError(f"unexpected {other!r}")


def missing_frames_file_test(tmp_path: Path) -> None:
  manifest = tmp_path / "manifest.jsonl"
  manifest.write_text(
    json.dumps({"id": "gone", "text": "abc", "frames": "gone.mtf"}) + "\n"
  )
  match load_manifest(manifest):
    case Err(BadFrames(id="gone", error=error)):
      assert not isinstance(error, str)
      assert error.kind == "unreadable"
    case other:
      raise AssertionError(f"unexpected {other!r}")
