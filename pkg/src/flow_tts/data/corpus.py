"""
Utterances, the synthetic corpus and the manifest-based real-data path.

The synthetic generator gives every token id a fixed random signature in
mel space. An utterance of tokens with durations d_i is the concatenation
of each signature repeated d_i times, plus Gaussian noise, so its
alignment is known exactly.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict

from flow_tts import rng
from flow_tts.align import Durations
from flow_tts.data.tensor_file import (
  TensorFileError,
  read_tensor_file,
  write_tensor_file,
)
from flow_tts.data.vocab import (
  DEFAULT_VOCAB,
  FIRST_SYMBOL_ID,
  TokenIds,
  Vocab,
  detokenize,
  tokenize,
)
from flow_tts.utils import pipe
from flow_tts.utils.decoding import decode_json_line
from flow_tts.utils.result import (
  Err,
  Ok,
  Result,
  map_error,
  unwrap,
  with_unwrap,
)

logger = logging.getLogger("Corpus")

NOISE_STD = 0.05
MIN_TOKENS, MAX_TOKENS = 2, 8
MIN_DURATION, MAX_DURATION = 2, 6


@dataclass(frozen=True)
class Utterance:
  id: str
  text: str
  tokens: TokenIds
  frames: npt.NDArray[np.float32]
  """[n_mel, T]"""
  true_durations: Durations | None = None

  def __post_init__(self) -> None:
    if self.tokens.ndim != 1 or self.tokens.size < 1:
      raise ValueError(f"{self.id}: utterance needs at least one token")
    if self.frames.ndim != 2:
      raise ValueError(f"{self.id}: frames must be [n_mel, T]")
    if self.n_frames < self.n_tokens:
      raise ValueError(
        f"{self.id}: {self.n_frames} frames cannot cover "
        f"{self.n_tokens} tokens"
      )
    if self.true_durations is not None and (
      self.true_durations.d.size != self.n_tokens
      or self.true_durations.total != self.n_frames
    ):
      raise ValueError(f"{self.id}: durations do not partition the frames")

  @property
  def n_tokens(self) -> int:
    return int(self.tokens.size)

  @property
  def n_frames(self) -> int:
    return int(self.frames.shape[1])

  @property
  def n_mel(self) -> int:
    return int(self.frames.shape[0])


# Synthetic corpus


def token_signatures(
  vocab_size: int, n_mel: int, seed: rng.Seed
) -> npt.NDArray[np.float64]:
  """[vocab_size, n_mel] fixed mel-space signature per token id"""
  return rng.stream(seed, "signatures").standard_normal((vocab_size, n_mel))


def random_tokens(
  n_tokens: int, vocab_size: int, generator: np.random.Generator
) -> TokenIds:
  """
  Ids drawn from the non-reserved range, never the same id twice in a row
  when more than one id is available
  """
  low = FIRST_SYMBOL_ID
  if vocab_size <= low:
    raise ValueError(f"vocab_size must exceed {low}, got {vocab_size}")
  available = vocab_size - low
  tokens = np.empty(n_tokens, dtype=np.int64)
  for i in range(n_tokens):
    if i == 0 or available == 1:
      tokens[i] = low + generator.integers(available)
    else:
      # Skip the previous id by drawing from the remaining ones
      step = 1 + generator.integers(available - 1)
      tokens[i] = low + (tokens[i - 1] - low + step) % available
  return tokens


def render_frames(
  tokens: TokenIds,
  durations: Durations,
  signatures: npt.NDArray[np.float64],
  noise: npt.NDArray[np.float64],
) -> npt.NDArray[np.float32]:
  clean = signatures[np.repeat(tokens, durations.d)].T
  return (clean + NOISE_STD * noise).astype(np.float32)


def synth_corpus(
  n_utts: int,
  vocab_size: int,
  n_mel: int,
  seed: rng.Seed,
  vocab: Vocab = DEFAULT_VOCAB,
) -> list[Utterance]:
  """
  `n_utts` utterances of 2-8 tokens with durations in 2..6 frames
  """
  if n_utts < 1 or n_mel < 1:
    raise ValueError("n_utts and n_mel must be at least 1")
  signatures = token_signatures(vocab_size, n_mel, seed)
  token_rng = rng.stream(seed, "corpus-tokens")
  duration_rng = rng.stream(seed, "corpus-durations")
  noise_rng = rng.stream(seed, "corpus-noise")

  utterances: list[Utterance] = []
  for i in range(n_utts):
    n_tokens = int(token_rng.integers(MIN_TOKENS, MAX_TOKENS + 1))
    tokens = random_tokens(n_tokens, vocab_size, token_rng)
    durations = Durations(
      duration_rng.integers(MIN_DURATION, MAX_DURATION + 1, size=n_tokens)
    )
    noise = noise_rng.standard_normal((n_mel, durations.total))
    utterances.append(
      Utterance(
        id=f"synth-{i:05d}",
        text=detokenize(tokens, vocab),
        tokens=tokens,
        frames=render_frames(tokens, durations, signatures, noise),
        true_durations=durations,
      )
    )
  return utterances


# Manifest path


class ManifestLine(BaseModel):
  model_config = ConfigDict(extra="forbid")

  id: str
  text: str
  frames: str
  durations: list[int] | None = None


@dataclass(frozen=True)
class ManifestUnreadable:
  path: str
  reason: str
  kind = "manifest-unreadable"

  @property
  def message(self) -> str:
    return f"{self.path}: {self.reason}"


@dataclass(frozen=True)
class BadManifestLine:
  line: int
  reason: str
  kind = "bad-manifest-line"

  @property
  def message(self) -> str:
    return f"line {self.line}: {self.reason}"


@dataclass(frozen=True)
class BadFrames:
  id: str
  error: TensorFileError | str
  kind = "bad-frames"

  @property
  def message(self) -> str:
    detail = self.error if isinstance(self.error, str) else self.error.message
    return f"{self.id}: {detail}"


type CorpusError = ManifestUnreadable | BadManifestLine | BadFrames


def _decode_line(number: int, line: str) -> Result[ManifestLine, CorpusError]:
  match decode_json_line(ManifestLine, line):
    case Ok(entry):
      return Ok(entry)
    case Err(reason):
      return Err(BadManifestLine(number, reason))


@with_unwrap
def load_entry(
  entry: ManifestLine, root: Path, vocab: Vocab, n_mel: int | None
) -> Result[Utterance, CorpusError]:
  frames_path = Path(entry.frames)
  if not frames_path.is_absolute():
    frames_path = root / frames_path
  frames = pipe(
    read_tensor_file(frames_path),
    map_error(lambda e: BadFrames(entry.id, e)),
    unwrap(),
  )
  if frames.ndim != 2 or (n_mel is not None and frames.shape[0] != n_mel):
    return Err(BadFrames(entry.id, f"frames shape {frames.shape}"))
  tokens = pipe(
    tokenize(entry.text, vocab),
    map_error(lambda e: BadFrames(entry.id, e.message)),
    unwrap(),
  )
  try:
    durations = (
      Durations(np.asarray(entry.durations, dtype=np.int64))
      if entry.durations is not None
      else None
    )
    return Ok(Utterance(entry.id, entry.text, tokens, frames, durations))
  except ValueError as e:
    return Err(BadFrames(entry.id, str(e)))


@with_unwrap
def read_manifest(path: str | Path) -> Result[list[ManifestLine], CorpusError]:
  """Decodes every non-blank line; frames are not read yet."""
  manifest = Path(path)
  try:
    lines = manifest.read_text(encoding="utf-8").splitlines()
  except OSError as e:
    return Err(ManifestUnreadable(str(manifest), e.strerror or str(e)))
  return Ok(
    [
      unwrap(_decode_line(number, line))
      for number, line in enumerate(lines, start=1)
      if line.strip()
    ]
  )


@with_unwrap
def load_manifest(
  path: str | Path, vocab: Vocab = DEFAULT_VOCAB, n_mel: int | None = None
) -> Result[list[Utterance], CorpusError]:
  """
  Reads a JSON-lines manifest of {"id", "text", "frames"} records

  Relative frame paths resolve against the manifest's directory. The
  first bad line or unreadable frames file fails the whole load.
  """
  manifest = Path(path)
  utterances = [
    unwrap(load_entry(entry, manifest.parent, vocab, n_mel))
    for entry in unwrap(read_manifest(manifest))
  ]
  logger.info(f"Loaded {len(utterances)} utterances from {manifest}")
  return Ok(utterances)


def export_corpus(utterances: list[Utterance], out_dir: str | Path) -> Path:
  """
  Writes `frames/<id>.mtf` per utterance plus `manifest.jsonl`

  Ground-truth durations, when known, ride along in the manifest.
  """
  root = Path(out_dir)
  (root / "frames").mkdir(parents=True, exist_ok=True)
  manifest = root / "manifest.jsonl"
  with manifest.open("w", encoding="utf-8") as out:
    for utt in utterances:
      relative = Path("frames") / f"{utt.id}.mtf"
      write_tensor_file(root / relative, utt.frames)
      line = ManifestLine(
        id=utt.id,
        text=utt.text,
        frames=relative.as_posix(),
        durations=(
          None
          if utt.true_durations is None
          else [int(d) for d in utt.true_durations.d]
        ),
      )
      out.write(json.dumps(line.model_dump(exclude_none=True)) + "\n")
  logger.info(f"Wrote {len(utterances)} utterances to {manifest}")
  return manifest
