"""Adam with bias correction and global-norm gradient clipping."""

import math
from dataclasses import dataclass

import numpy as np

from flow_tts.config import TrainConfig
from flow_tts.net.params import ModelParams
from flow_tts.numerics.tensor import Array


@dataclass
class AdamState:
  """First and second moments per parameter; `step` counts updates."""

  step: int
  m: dict[str, Array]
  v: dict[str, Array]

  @classmethod
  def zeros(cls, params: ModelParams) -> "AdamState":
    return cls(
      step=0,
      m={name: np.zeros_like(t.data) for name, t in params.items()},
      v={name: np.zeros_like(t.data) for name, t in params.items()},
    )


def collect_gradients(params: ModelParams) -> dict[str, Array]:
  """Gradients left by the last backward pass; unreached tensors get 0."""
  return {
    name: np.zeros_like(t.data) if t.grad is None else t.grad
    for name, t in params.items()
  }


def global_norm(grads: dict[str, Array]) -> float:
  return math.sqrt(
    sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())
  )


def clip_by_global_norm(
  grads: dict[str, Array], max_norm: float
) -> tuple[dict[str, Array], float]:
  """Rescales all gradients together so their joint norm is <= max_norm."""
  norm = global_norm(grads)
  if norm <= max_norm or norm == 0.0:
    return grads, norm
  scale = max_norm / norm
  return {name: (g * scale).astype(g.dtype) for name, g in grads.items()}, norm


def adam_update(
  params: ModelParams,
  grads: dict[str, Array],
  state: AdamState,
  config: TrainConfig,
) -> AdamState:
  """
  One Adam step; each parameter's `data` is replaced, never mutated
  """
  step = state.step + 1
  b1, b2 = config.adam_beta1, config.adam_beta2
  correction1 = 1.0 - b1**step
  correction2 = 1.0 - b2**step
  m: dict[str, Array] = {}
  v: dict[str, Array] = {}
  for name, tensor in params.items():
    g = grads[name].astype(tensor.dtype)
    m[name] = (b1 * state.m[name] + (1.0 - b1) * g).astype(tensor.dtype)
    v[name] = (b2 * state.v[name] + (1.0 - b2) * g * g).astype(tensor.dtype)
    m_hat = m[name] / correction1
    v_hat = v[name] / correction2
    delta = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    tensor.data = (tensor.data - delta).astype(tensor.dtype)
    tensor.grad = None
  return AdamState(step=step, m=m, v=v)
