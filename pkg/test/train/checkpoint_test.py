"""Checkpoint container."""

import struct
from pathlib import Path

import numpy as np

from flow_tts.config import RunConfig
from flow_tts.net.model import init_params
from flow_tts.train.checkpoint import (
  FORMAT_VERSION,
  MAGIC,
  Checkpoint,
  ConfigMismatch,
  Corrupted,
  MissingTensor,
  VersionMismatch,
  decode_checkpoint,
  encode_checkpoint,
  load_checkpoint,
  save_checkpoint,
)
from flow_tts.train.optim import AdamState
from flow_tts.utils.result import Err, expect

# Using pytest test functions


def _checkpoint(config: RunConfig, update: int = 7) -> Checkpoint:
  params = init_params(config.model, 1)
  adam = AdamState.zeros(params)
  for name, tensor in params.items():
    adam.m[name] = (tensor.data * 0.5).astype(np.float32)
    adam.v[name] = (tensor.data**2).astype(np.float32)
  adam.step = update
  return Checkpoint(config=config, params=params, adam=adam, update=update)


def round_trip_test(tmp_path: Path, tiny_run: RunConfig) -> None:
  original = _checkpoint(tiny_run)
  path = save_checkpoint(tmp_path / "nested" / "a.mtfc", original)
  loaded = expect(load_checkpoint(path, tiny_run.model))
  assert loaded.update == 7
  assert loaded.adam.step == 7
  assert loaded.config == tiny_run
  for name, tensor in original.params.items():
    np.testing.assert_array_equal(loaded.params[name].data, tensor.data)
    np.testing.assert_array_equal(loaded.adam.m[name], original.adam.m[name])
    np.testing.assert_array_equal(loaded.adam.v[name], original.adam.v[name])


def rewrite_is_byte_identical_test(tiny_run: RunConfig) -> None:
  encoded = encode_checkpoint(_checkpoint(tiny_run))
  again = encode_checkpoint(expect(decode_checkpoint(encoded)))
  assert encoded == again


def header_layout_test(tiny_run: RunConfig) -> None:
  encoded = encode_checkpoint(_checkpoint(tiny_run))
  assert encoded[:4] == MAGIC
  assert struct.unpack_from("<I", encoded, 4)[0] == FORMAT_VERSION


def version_mismatch_test(tiny_run: RunConfig) -> None:
  encoded = bytearray(encode_checkpoint(_checkpoint(tiny_run)))
  encoded[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
  assert decode_checkpoint(bytes(encoded)) == Err(
    VersionMismatch(FORMAT_VERSION + 1)
  )


def config_mismatch_names_the_field_test(tiny_run: RunConfig) -> None:
  encoded = encode_checkpoint(_checkpoint(tiny_run))
  wider = tiny_run.model.model_copy(update={"n_mel": 5})
  match decode_checkpoint(encoded, wider):
    case Err(ConfigMismatch(field=field, expected=expected, found=found)):
      assert field == "model.n_mel"
      assert (expected, found) == ("5", "4")
    case other:
      raise AssertionError(f"unexpected {other!r}")


def nested_config_mismatch_test(tiny_run: RunConfig) -> None:
  encoded = encode_checkpoint(_checkpoint(tiny_run))
  decoder = tiny_run.model.decoder.model_copy(update={"hidden": 16})
  other = tiny_run.model.model_copy(update={"decoder": decoder})
  match decode_checkpoint(encoded, other):
    case Err(ConfigMismatch(field="model.decoder.hidden")):
      pass
    case result:
      raise AssertionError(f"unexpected {result!r}")


def truncated_file_test(tiny_run: RunConfig) -> None:
  encoded = encode_checkpoint(_checkpoint(tiny_run))
  match decode_checkpoint(encoded[:-10]):
    case Err(Corrupted()):
      pass
    case other:
      raise AssertionError(f"unexpected {other!r}")


def not_a_checkpoint_test(tmp_path: Path) -> None:
  path = tmp_path / "x.mtfc"
  path.write_bytes(b"MTF1" + bytes(20))
  match load_checkpoint(path):
    case Err(Corrupted()):
      pass
    case other:
      raise AssertionError(f"unexpected {other!r}")


def missing_file_test(tmp_path: Path) -> None:
  match load_checkpoint(tmp_path / "absent.mtfc"):
    case Err(Corrupted(reason=reason)):
      assert "absent.mtfc" in reason
    case other:
      raise AssertionError(f"unexpected {other!r}")


def missing_tensor_test(tiny_run: RunConfig) -> None:
  ckpt = _checkpoint(tiny_run)
  name = "encoder.embedding"
  del ckpt.params.tensors[name]
  match decode_checkpoint(encode_checkpoint(ckpt)):
    case Err(MissingTensor(name=missing)):
      assert missing == f"param/{name}"
    case other:
      raise AssertionError(f"unexpected {other!r}")
