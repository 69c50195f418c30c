"""
Named parameter tensors.

Every tensor is registered up front by a `ParamSpec` (shape plus init
rule); blocks read them by dotted name, e.g. `decoder.down.0.res.conv1`.
"""

import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt

from flow_tts import rng
from flow_tts.numerics.tensor import Tensor

type InitRule = Literal["fan_in", "zeros", "ones", "embedding"]


@dataclass(frozen=True)
class ParamSpec:
  shape: tuple[int, ...]
  init: InitRule = "fan_in"

  @property
  def size(self) -> int:
    return math.prod(self.shape)


def _initial_value(
  name: str, spec: ParamSpec, seed: rng.Seed
) -> npt.NDArray[np.float64]:
  match spec.init:
    case "zeros":
      return np.zeros(spec.shape)
    case "ones":
      return np.ones(spec.shape)
    case "embedding":
      scale = spec.shape[-1] ** -0.5
      return scale * rng.stream(seed, f"init:{name}").standard_normal(
        spec.shape
      )
    case "fan_in":
      fan_in = math.prod(spec.shape[1:]) if len(spec.shape) > 1 else 1
      bound = 1.0 / math.sqrt(fan_in)
      return rng.stream(seed, f"init:{name}").uniform(
        -bound, bound, size=spec.shape
      )


class ModelParams:
  """
  Immutable mapping of name -> Tensor

  Optimizers replace each tensor's `data`; the mapping itself never
  changes after construction.
  """

  tensors: dict[str, Tensor]

  def __init__(self, tensors: Mapping[str, Tensor]) -> None:
    self.tensors = dict(sorted(tensors.items()))

  @classmethod
  def initialize(
    cls,
    specs: Mapping[str, ParamSpec],
    seed: rng.Seed,
    dtype: npt.DTypeLike = np.float32,
  ) -> "ModelParams":
    """
    Fan-in uniform weights, zero biases, unit gains; each tensor draws
    from its own named stream so adding a block leaves the others as-is
    """
    return cls(
      {
        name: Tensor(_initial_value(name, spec, seed).astype(dtype), name=name)
        for name, spec in specs.items()
      }
    )

  def __getitem__(self, name: str) -> Tensor:
    return self.tensors[name]

  def __contains__(self, name: object) -> bool:
    return name in self.tensors

  def __iter__(self) -> Iterator[str]:
    return iter(self.tensors)

  def __len__(self) -> int:
    return len(self.tensors)

  def items(self) -> Iterator[tuple[str, Tensor]]:
    return iter(self.tensors.items())

  def values(self) -> Iterator[Tensor]:
    return iter(self.tensors.values())

  def shapes(self) -> dict[str, tuple[int, ...]]:
    return {name: t.shape for name, t in self.tensors.items()}

  def count(self) -> int:
    return count_params(self)

  def astype(self, dtype: npt.DTypeLike) -> "ModelParams":
    """Independent copy in `dtype` (64-bit copies for gradient checks)."""
    return ModelParams(
      {
        name: Tensor(t.data.astype(dtype), name=name)
        for name, t in self.tensors.items()
      }
    )

  def all_finite(self) -> bool:
    return all(bool(np.all(np.isfinite(t.data))) for t in self.values())

  def track(self, enabled: bool = True) -> "ModelParams":
    for t in self.values():
      t.requires_grad = enabled
      t.grad = None
    return self

  def select(self, prefix: str) -> dict[str, Tensor]:
    return {
      name: t
      for name, t in self.tensors.items()
      if name == prefix or name.startswith(prefix + ".")
    }


def count_params(params: ModelParams | Mapping[str, Tensor]) -> int:
  tensors = params.values()
  return sum(t.size for t in tensors)
