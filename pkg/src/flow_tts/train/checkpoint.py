"""
Checkpoint container.

    "MTFC" | version: u32 LE | index length: u32 LE | index (UTF-8 JSON)
    | one MTF record per tensor, in index order

The index carries the run configuration, the update counter and the
name and shape of every tensor. Parameters are stored as `param/<name>`
and the Adam moments as `adam.m/<name>` and `adam.v/<name>`. Given the
same state, the bytes written are identical.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, ValidationError

from flow_tts.config import RunConfig
from flow_tts.data.tensor_file import F32Array, decode_tensor, encode_tensor
from flow_tts.net.config import ModelConfig
from flow_tts.net.model import param_specs
from flow_tts.net.params import ModelParams
from flow_tts.numerics.tensor import Tensor
from flow_tts.train.optim import AdamState
from flow_tts.utils.result import Err, Ok, Result

logger = logging.getLogger("Checkpoint")

MAGIC = b"MTFC"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
  config: RunConfig
  params: ModelParams
  adam: AdamState
  update: int


class TensorEntry(BaseModel):
  model_config = ConfigDict(extra="forbid")

  name: str
  shape: list[int]


class CheckpointIndex(BaseModel):
  model_config = ConfigDict(extra="forbid")

  config: RunConfig
  update: int
  seed: int
  tensors: list[TensorEntry]


@dataclass(frozen=True)
class VersionMismatch:
  found: int
  kind = "version-mismatch"

  @property
  def message(self) -> str:
    return f"checkpoint format {self.found}, expected {FORMAT_VERSION}"


@dataclass(frozen=True)
class MissingTensor:
  name: str
  kind = "missing-tensor"

  @property
  def message(self) -> str:
    return f"checkpoint has no tensor '{self.name}'"


@dataclass(frozen=True)
class ConfigMismatch:
  field: str
  expected: str
  found: str
  kind = "config-mismatch"

  @property
  def message(self) -> str:
    return (
      f"{self.field}: expected {self.expected}, checkpoint has {self.found}"
    )


@dataclass(frozen=True)
class Corrupted:
  reason: str
  kind = "corrupted"

  @property
  def message(self) -> str:
    return self.reason


type CheckpointError = (
  VersionMismatch | MissingTensor | ConfigMismatch | Corrupted
)


def _stored_tensors(checkpoint: Checkpoint) -> list[tuple[str, F32Array]]:
  named: list[tuple[str, F32Array]] = []
  for name, tensor in checkpoint.params.items():
    named.append((f"param/{name}", tensor.data))
  for name in checkpoint.params:
    named.append((f"adam.m/{name}", checkpoint.adam.m[name]))
    named.append((f"adam.v/{name}", checkpoint.adam.v[name]))
  return named


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
  named = _stored_tensors(checkpoint)
  index = CheckpointIndex(
    config=checkpoint.config,
    update=checkpoint.update,
    seed=checkpoint.config.train.seed,
    tensors=[TensorEntry(name=n, shape=list(a.shape)) for n, a in named],
  )
  index_bytes = json.dumps(
    index.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
  ).encode("utf-8")
  parts = [
    MAGIC,
    _U32.pack(FORMAT_VERSION),
    _U32.pack(len(index_bytes)),
    index_bytes,
  ]
  parts.extend(encode_tensor(array) for _, array in named)
  return b"".join(parts)


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
  target = Path(path)
  target.parent.mkdir(parents=True, exist_ok=True)
  target.write_bytes(encode_checkpoint(checkpoint))
  logger.info(f"Saved update {checkpoint.update} to {target}")
  return target


def _flatten(data: Any, prefix: str = "") -> dict[str, Any]:
  if isinstance(data, dict):
    flat: dict[str, Any] = {}
    for key, value in data.items():
      flat |= _flatten(value, f"{prefix}{key}.")
    return flat
  return {prefix.rstrip("."): data}


def config_difference(
  expected: ModelConfig, found: ModelConfig
) -> ConfigMismatch | None:
  mine = _flatten(expected.model_dump(mode="json"))
  theirs = _flatten(found.model_dump(mode="json"))
  for key in sorted(mine):
    if mine[key] != theirs.get(key):
      return ConfigMismatch(
        f"model.{key}", str(mine[key]), str(theirs.get(key))
      )
  return None


def decode_checkpoint(
  buffer: bytes, expected: ModelConfig | None = None
) -> Result[Checkpoint, CheckpointError]:
  if len(buffer) < 12 or buffer[:4] != MAGIC:
    return Err(Corrupted("not a checkpoint (bad magic)"))
  (version,) = _U32.unpack_from(buffer, 4)
  if version != FORMAT_VERSION:
    return Err(VersionMismatch(version))
  (index_length,) = _U32.unpack_from(buffer, 8)
  offset = 12 + index_length
  if offset > len(buffer):
    return Err(Corrupted("index extends past the end of the file"))
  try:
    index = CheckpointIndex.model_validate_json(buffer[12:offset])
  except ValidationError as e:
    return Err(Corrupted(f"unreadable index: {e.error_count()} errors"))

  if expected is not None:
    mismatch = config_difference(expected, index.config.model)
    if mismatch is not None:
      return Err(mismatch)

  arrays: dict[str, F32Array] = {}
  for entry in index.tensors:
    match decode_tensor(buffer, offset):
      case Ok((array, end)):
        if list(array.shape) != entry.shape:
          return Err(Corrupted(f"{entry.name}: shape {array.shape}"))
        arrays[entry.name] = array
        offset = end
      case Err(error):
        return Err(Corrupted(f"{entry.name}: {error.message}"))

  specs = param_specs(index.config.model)
  tensors: dict[str, Tensor] = {}
  m: dict[str, F32Array] = {}
  v: dict[str, F32Array] = {}
  for name, spec in specs.items():
    for stored in (f"param/{name}", f"adam.m/{name}", f"adam.v/{name}"):
      if stored not in arrays:
        return Err(MissingTensor(stored))
      if arrays[stored].shape != spec.shape:
        return Err(
          Corrupted(f"{stored}: shape {arrays[stored].shape} != {spec.shape}")
        )
    tensors[name] = Tensor(arrays[f"param/{name}"], name=name)
    m[name] = arrays[f"adam.m/{name}"]
    v[name] = arrays[f"adam.v/{name}"]

  return Ok(
    Checkpoint(
      config=index.config,
      params=ModelParams(tensors),
      adam=AdamState(step=index.update, m=m, v=v),
      update=index.update,
    )
  )


def load_checkpoint(
  path: str | Path, expected: ModelConfig | None = None
) -> Result[Checkpoint, CheckpointError]:
  """
  Reads a checkpoint; with `expected`, any model-config difference is a
  `ConfigMismatch` naming the first differing field
  """
  try:
    buffer = Path(path).read_bytes()
  except OSError as e:
    return Err(Corrupted(f"{path}: {e.strerror or e}"))
  return decode_checkpoint(buffer, expected)
