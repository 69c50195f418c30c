"""
Character-level vocabulary.

Ids 0 and 1 are reserved for padding and unknown glyphs; the remaining ids
cover lowercase letters, space and basic punctuation. Text is lowercased
and otherwise left as-is.
"""

import string
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from flow_tts.utils.result import Err, Ok, Result

PAD_ID = 0
UNK_ID = 1
FIRST_SYMBOL_ID = 2
UNK_GLYPH = "#"

type TokenIds = npt.NDArray[np.int64]


@dataclass(frozen=True)
class EmptyText:
  kind = "empty-text"
  message = "cannot tokenize an empty string"


@dataclass(frozen=True)
class Vocab:
  symbols: tuple[str, ...]
  _ids: dict[str, int] = field(init=False, repr=False, compare=False)

  def __post_init__(self) -> None:
    if len(set(self.symbols)) != len(self.symbols):
      raise ValueError("vocabulary symbols must be distinct")
    ids = {s: FIRST_SYMBOL_ID + i for i, s in enumerate(self.symbols)}
    object.__setattr__(self, "_ids", ids)

  def __len__(self) -> int:
    return FIRST_SYMBOL_ID + len(self.symbols)

  def id_of(self, glyph: str) -> int:
    return self._ids.get(glyph, UNK_ID)

  def symbol_of(self, token: int) -> str:
    if token == PAD_ID:
      return ""
    index = token - FIRST_SYMBOL_ID
    if 0 <= index < len(self.symbols):
      return self.symbols[index]
    return UNK_GLYPH


DEFAULT_VOCAB = Vocab(
  tuple(string.ascii_lowercase) + (" ",) + tuple(".,!?'-;:")
)


def tokenize(
  text: str, vocab: Vocab = DEFAULT_VOCAB
) -> Result[TokenIds, EmptyText]:
  """
  One id per character of the lowercased text; unknown glyphs map to
  `UNK_ID`
  """
  if not text:
    return Err(EmptyText())
  return Ok(np.array([vocab.id_of(c) for c in text.lower()], dtype=np.int64))


def detokenize(tokens: npt.ArrayLike, vocab: Vocab = DEFAULT_VOCAB) -> str:
  return "".join(vocab.symbol_of(int(t)) for t in np.asarray(tokens).ravel())
