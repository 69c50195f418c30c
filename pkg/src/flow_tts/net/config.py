from typing import Literal, Self

from pydantic import BaseModel, ConfigDict, Field, model_validator

from flow_tts.cfm import DEFAULT_SIGMA_MIN
from flow_tts.data.vocab import DEFAULT_VOCAB

type Scale = Literal["toy", "paper"]

REFERENCE_PARAM_COUNT = 18_200_000


class EncoderConfig(BaseModel):
  """Text encoder and duration predictor sizes."""

  model_config = ConfigDict(frozen=True, extra="forbid")

  channels: int = Field(default=64, ge=2)
  filter_channels: int = Field(default=128, ge=1)
  heads: int = Field(default=2, ge=1)
  layers: int = Field(default=2, ge=1)
  kernel_size: int = Field(default=3, ge=1)
  prenet_layers: int = Field(default=3, ge=1)
  prenet_kernel: int = Field(default=5, ge=1)
  duration_channels: int = Field(default=64, ge=1)
  duration_kernel: int = Field(default=3, ge=1)

  @model_validator(mode="after")
  def _check_heads(self) -> Self:
    if self.channels % self.heads != 0:
      raise ValueError(
        f"encoder channels {self.channels} not divisible by "
        f"{self.heads} heads"
      )
    if (self.channels // self.heads) % 2 != 0:
      raise ValueError("encoder head dimension must be even for RoPE")
    for name in ("kernel_size", "prenet_kernel", "duration_kernel"):
      if getattr(self, name) % 2 == 0:
        raise ValueError(f"encoder {name} must be odd")
    return self

  @property
  def head_dim(self) -> int:
    return self.channels // self.heads


class DecoderConfig(BaseModel):
  """U-Net vector-field network sizes."""

  model_config = ConfigDict(frozen=True, extra="forbid")

  hidden: int = Field(default=256, ge=1)
  heads: int = Field(default=2, ge=1)
  attention_dim: int = Field(default=64, ge=1)
  n_down: int = Field(default=2, ge=1)
  n_mid: int = Field(default=2, ge=1)
  n_up: int = Field(default=2, ge=1)
  groups: int = Field(default=8, ge=1)
  ff_mult: int = Field(default=4, ge=1)
  time_sin_dim: int = Field(default=160, ge=2)

  @model_validator(mode="after")
  def _check_shapes(self) -> Self:
    if self.n_up != self.n_down:
      raise ValueError(
        f"decoder needs as many up blocks as down blocks "
        f"({self.n_up} != {self.n_down})"
      )
    if self.hidden % self.groups != 0:
      raise ValueError(
        f"decoder hidden {self.hidden} not divisible by "
        f"{self.groups} groups"
      )
    if self.time_sin_dim % 2 != 0:
      raise ValueError("decoder time_sin_dim must be even")
    return self

  @property
  def inner_dim(self) -> int:
    return self.heads * self.attention_dim

  @property
  def time_dim(self) -> int:
    return 4 * self.hidden

  @property
  def length_multiple(self) -> int:
    return 2**self.n_down


class ModelConfig(BaseModel):
  model_config = ConfigDict(frozen=True, extra="forbid")

  n_vocab: int = Field(default=len(DEFAULT_VOCAB), ge=3)
  n_mel: int = Field(default=80, ge=1)
  encoder: EncoderConfig = EncoderConfig()
  decoder: DecoderConfig = DecoderConfig()
  sigma_min: float = Field(default=DEFAULT_SIGMA_MIN, ge=0.0, lt=1.0)
  scale: Scale = "paper"

  @classmethod
  def preset(cls, scale: Scale) -> "ModelConfig":
    match scale:
      case "toy":
        return cls(
          n_mel=20,
          encoder=EncoderConfig(),
          decoder=DecoderConfig(
            hidden=64,
            heads=1,
            attention_dim=64,
            n_down=1,
            n_mid=1,
            n_up=1,
            groups=8,
            time_sin_dim=32,
          ),
          scale="toy",
        )
      case "paper":
        return cls(
          n_mel=80,
          encoder=EncoderConfig(
            channels=192,
            filter_channels=768,
            heads=2,
            layers=6,
            duration_channels=256,
          ),
          decoder=DecoderConfig(),
          scale="paper",
        )
