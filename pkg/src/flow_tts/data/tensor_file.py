"""
MTF tensor files.

    "MTF1" | rank: u32 LE | rank x extent: u32 LE | payload: f32 LE

The payload is row-major. The same record layout is embedded in
checkpoint containers, so decoding works on a buffer plus an offset.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from flow_tts.utils.result import Err, Ok, Result

MAGIC = b"MTF1"
MAX_RANK = 8
_U32 = struct.Struct("<I")
_PAYLOAD_DTYPE = np.dtype("<f4")

type F32Array = npt.NDArray[np.float32]


@dataclass(frozen=True)
class BadMagic:
  found: bytes
  kind = "bad-magic"

  @property
  def message(self) -> str:
    return f"expected {MAGIC!r}, found {self.found!r}"


@dataclass(frozen=True)
class Truncated:
  expected: int
  actual: int
  kind = "truncated"

  @property
  def message(self) -> str:
    return f"needed {self.expected} bytes, only {self.actual} available"


@dataclass(frozen=True)
class RankTooLarge:
  rank: int
  kind = "rank-too-large"

  @property
  def message(self) -> str:
    return f"rank {self.rank} exceeds the maximum of {MAX_RANK}"


@dataclass(frozen=True)
class Unreadable:
  path: str
  reason: str
  kind = "unreadable"

  @property
  def message(self) -> str:
    return f"{self.path}: {self.reason}"


type TensorFileError = BadMagic | Truncated | RankTooLarge | Unreadable


def encode_tensor(values: npt.ArrayLike) -> bytes:
  array = np.asarray(values)
  if array.ndim > MAX_RANK:
    raise ValueError(f"rank {array.ndim} exceeds the maximum of {MAX_RANK}")
  header = MAGIC + _U32.pack(array.ndim)
  header += b"".join(_U32.pack(extent) for extent in array.shape)
  payload = np.ascontiguousarray(array, dtype=_PAYLOAD_DTYPE).tobytes()
  return header + payload


def decode_tensor(
  buffer: bytes, offset: int = 0
) -> Result[tuple[F32Array, int], TensorFileError]:
  """
  Reads one record starting at `offset`

  Returns the array and the offset just past its payload.
  """

  def need(count: int) -> Truncated | None:
    available = len(buffer) - offset
    return Truncated(count, max(available, 0)) if available < count else None

  if (short := need(4)) is not None:
    return Err(BadMagic(buffer[offset:]) if short.actual else short)
  if buffer[offset : offset + 4] != MAGIC:
    return Err(BadMagic(buffer[offset : offset + 4]))
  offset += 4
  if (short := need(4)) is not None:
    return Err(short)
  (rank,) = _U32.unpack_from(buffer, offset)
  offset += 4
  if rank > MAX_RANK:
    return Err(RankTooLarge(rank))
  if (short := need(4 * rank)) is not None:
    return Err(short)
  shape = tuple(
    _U32.unpack_from(buffer, offset + 4 * i)[0] for i in range(rank)
  )
  offset += 4 * rank
  payload_bytes = int(np.prod(shape, dtype=np.int64)) * _PAYLOAD_DTYPE.itemsize
  if (short := need(payload_bytes)) is not None:
    return Err(short)
  if payload_bytes == 0:
    return Ok((np.zeros(shape, dtype=np.float32), offset))
  flat = np.frombuffer(
    buffer, dtype=_PAYLOAD_DTYPE, count=payload_bytes // 4, offset=offset
  )
  array = flat.astype(np.float32).reshape(shape)
  return Ok((array, offset + payload_bytes))


def write_tensor_file(path: str | Path, values: npt.ArrayLike) -> None:
  """Writes `values` as 32-bit floats; raises OSError on I/O failure."""
  Path(path).write_bytes(encode_tensor(values))


def read_tensor_file(path: str | Path) -> Result[F32Array, TensorFileError]:
  try:
    buffer = Path(path).read_bytes()
  except OSError as e:
    return Err(Unreadable(str(path), e.strerror or str(e)))
  match decode_tensor(buffer):
    case Ok((array, _)):
      return Ok(array)
    case Err(error):
      return Err(error)
