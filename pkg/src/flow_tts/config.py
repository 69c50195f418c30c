"""
Run configuration and environment settings.

A run is described by an INI-style file:

    [model]
    scale = toy
    n_mel = 20

    [decoder]
    hidden = 64

    [train]
    learning_rate = 1e-3

`scale` picks the preset for both the model and the training settings;
every other key overrides one field. Unknown sections and keys are
errors.
"""

import configparser
import logging
import os
from pathlib import Path
from typing import Any, Literal, Self

from pydantic import (
  BaseModel,
  ConfigDict,
  Field,
  ValidationError,
  model_validator,
)

from flow_tts.cfm import DEFAULT_SIGMA_MIN
from flow_tts.net.config import (
  DecoderConfig,
  EncoderConfig,
  ModelConfig,
  Scale,
)
from flow_tts.utils.result import Err, Ok, Result

LOG_LEVEL_ENV = "FLOW_TTS_LOG_LEVEL"
SLOW_TESTS_ENV = "FLOW_TTS_SLOW_TESTS"


def get_log_level() -> int:
  """
  Logging level from FLOW_TTS_LOG_LEVEL

  Defaults to INFO if not present or not a level name
  """
  match os.getenv(LOG_LEVEL_ENV):
    case None:
      return logging.INFO
    case name:
      level = logging.getLevelNamesMapping().get(name.strip().upper())
      return logging.INFO if level is None else level


def slow_tests_enabled() -> bool:
  match os.getenv(SLOW_TESTS_ENV):
    case None | "" | "0" | "false":
      return False
    case _:
      return True


class TrainConfig(BaseModel):
  model_config = ConfigDict(frozen=True, extra="forbid")

  learning_rate: float = Field(default=1e-4, gt=0.0)
  batch_size: int = Field(default=32, ge=1)
  max_updates: int = Field(default=2000, ge=0)
  seed: int = Field(default=0, ge=0)
  sigma_min: float = Field(default=DEFAULT_SIGMA_MIN, ge=0.0, lt=1.0)
  checkpoint_every: int = Field(default=500, ge=1)
  clip_norm: float = Field(default=1.0, gt=0.0)
  adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
  adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
  adam_eps: float = Field(default=1e-8, gt=0.0)
  scale: Scale = "paper"

  @classmethod
  def preset(cls, scale: Scale) -> "TrainConfig":
    match scale:
      case "toy":
        return cls(learning_rate=1e-3, batch_size=16, scale="toy")
      case "paper":
        return cls(scale="paper")


class DataConfig(BaseModel):
  """Where utterances come from: a manifest or the synthetic generator."""

  model_config = ConfigDict(frozen=True, extra="forbid")

  manifest: str | None = None
  n_utts: int = Field(default=256, ge=1)
  vocab_size: int = Field(default=12, ge=3)
  seed: int = Field(default=0, ge=0)
  poison_padding: bool = False

  @property
  def synthetic(self) -> bool:
    return self.manifest is None


class RunConfig(BaseModel):
  model_config = ConfigDict(frozen=True, extra="forbid")

  model: ModelConfig = ModelConfig.preset("toy")
  train: TrainConfig = TrainConfig.preset("toy")
  data: DataConfig = DataConfig()

  @model_validator(mode="after")
  def _check_consistency(self) -> Self:
    if self.model.sigma_min != self.train.sigma_min:
      raise ValueError(
        f"sigma_min differs between model ({self.model.sigma_min}) "
        f"and train ({self.train.sigma_min})"
      )
    if self.data.vocab_size > self.model.n_vocab:
      raise ValueError(
        f"data vocab_size {self.data.vocab_size} exceeds model "
        f"n_vocab {self.model.n_vocab}"
      )
    return self

  @classmethod
  def preset(cls, scale: Scale) -> "RunConfig":
    return cls(
      model=ModelConfig.preset(scale),
      train=TrainConfig.preset(scale),
    )


SECTIONS: dict[str, type[BaseModel]] = {
  "model": ModelConfig,
  "encoder": EncoderConfig,
  "decoder": DecoderConfig,
  "train": TrainConfig,
  "data": DataConfig,
}
_NESTED = {"encoder", "decoder"}


def _check_keys(section: str, keys: list[str]) -> Result[None, str]:
  model = SECTIONS[section]
  allowed = set(model.model_fields) - _NESTED
  for key in keys:
    if key not in allowed:
      return Err(f"unknown key '{key}' in section [{section}]")
  return Ok(None)


def parse_config(
  text: str, source: str = "<config>"
) -> Result[RunConfig, str]:
  """
  Builds a `RunConfig` from INI text; the error names the offending key
  """
  parser = configparser.ConfigParser(
    interpolation=None, default_section="__defaults__"
  )
  try:
    parser.read_string(text, source=source)
  except configparser.Error as e:
    return Err(f"{source}: {e.message}")

  overrides: dict[str, dict[str, Any]] = {}
  for section in parser.sections():
    if section not in SECTIONS:
      return Err(f"unknown section [{section}]")
    keys = list(parser[section].keys())
    match _check_keys(section, keys):
      case Err(e):
        return Err(e)
      case Ok(_):
        overrides[section] = dict(parser[section].items())

  model_section = overrides.get("model", {})
  scale: Literal["toy", "paper"]
  match model_section.pop("scale", "toy"):
    case "toy" | "paper" as picked:
      scale = picked
    case other:
      return Err(f"invalid value for 'model.scale': '{other}'")

  base = RunConfig.preset(scale)
  model_data = base.model.model_dump()
  model_data.update(model_section)
  for nested in _NESTED:
    model_data[nested] |= overrides.get(nested, {})
  train_section = overrides.get("train", {})
  train_data = base.train.model_dump() | train_section
  # sigma_min set on one side only applies to both
  match ("sigma_min" in model_section, "sigma_min" in train_section):
    case (True, False):
      train_data["sigma_min"] = model_section["sigma_min"]
    case (False, True):
      model_data["sigma_min"] = train_data["sigma_min"]
    case _:
      pass
  data_data = base.data.model_dump() | overrides.get("data", {})

  try:
    return Ok(
      RunConfig.model_validate(
        {"model": model_data, "train": train_data, "data": data_data}
      )
    )
  except ValidationError as e:
    first = e.errors()[0]
    where = ".".join(str(part) for part in first["loc"])
    return Err(f"invalid value for '{where}': {first['msg']}")


def load_config_file(path: str | Path) -> Result[RunConfig, str]:
  try:
    text = Path(path).read_text(encoding="utf-8")
  except OSError as e:
    return Err(f"{path}: {e.strerror or e}")
  return parse_config(text, source=str(path))
