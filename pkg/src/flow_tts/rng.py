"""Named, seedable random streams."""

import zlib
from collections.abc import Sequence

import numpy as np

type Seed = int | Sequence[int]


def _words(seed: Seed) -> list[int]:
  return [int(seed)] if isinstance(seed, int) else [int(s) for s in seed]


def stream(seed: Seed, name: str) -> np.random.Generator:
  """
  Generator for the stream `name` under `seed`

  Distinct names give statistically independent streams; the same
  (seed, name) always reproduces the same draws.
  """
  tag = zlib.crc32(name.encode("utf-8"))
  return np.random.default_rng(np.random.SeedSequence([*_words(seed), tag]))


def derive(seed: Seed, *keys: int) -> list[int]:
  """Seed words for a sub-step, e.g. `derive(seed, update)`."""
  return [*_words(seed), *keys]
