"""
Finite-difference verification of tape gradients.

All checks run at 64-bit: inputs are promoted for the duration of the
check and restored afterwards.
"""

from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from flow_tts.numerics.tensor import Array, Tape, Tensor


class NonFiniteError(ArithmeticError):
  """A forward evaluation during a gradient check produced NaN or inf."""

  tensor: str
  index: tuple[int, ...]

  def __init__(self, tensor: str, index: tuple[int, ...]) -> None:
    self.tensor = tensor
    self.index = index
    super().__init__(f"non-finite value while perturbing {tensor}{list(index)}")


@dataclass(frozen=True)
class TensorCheck:
  name: str
  checked: int
  max_rel_error: float
  passed: bool


@dataclass(frozen=True)
class GradCheckReport:
  tol: float
  checks: list[TensorCheck]

  @property
  def max_rel_error(self) -> float:
    return max((c.max_rel_error for c in self.checks), default=0.0)

  @property
  def passed(self) -> bool:
    return all(c.passed for c in self.checks)

  def failures(self) -> list[TensorCheck]:
    return [c for c in self.checks if not c.passed]


def relative_error(analytic: float, numeric: float, floor: float) -> float:
  """
  |a - n| / max(|a|, |n|, floor)

  Gradients below `floor` are compared absolutely, where central
  differences are dominated by rounding.
  """
  scale = max(abs(analytic), abs(numeric), floor)
  return abs(analytic - numeric) / scale


def _evaluate(fn: Callable[[], Tensor]) -> float:
  return float(fn().data)


def grad_check(
  fn: Callable[[], Tensor],
  inputs: Mapping[str, Tensor],
  eps: float = 1e-6,
  tol: float = 1e-5,
  max_elements: int | None = None,
  floor: float = 1e-3,
  seed: int = 0,
) -> GradCheckReport:
  """
  Compares analytic gradients of the scalar `fn()` against central
  differences for every tensor in `inputs`

  `fn` reads the tensors in `inputs` (for example through closed-over
  parameters). With `max_elements` set, larger tensors are checked on a
  seeded random subset of elements.
  """
  if eps <= 0 or tol <= 0:
    raise ValueError("grad_check: eps and tol must be positive")

  originals = {name: t.data for name, t in inputs.items()}
  flags = {name: t.requires_grad for name, t in inputs.items()}
  rng = np.random.default_rng(seed)
  try:
    for t in inputs.values():
      t.data = t.data.astype(np.float64)
      t.requires_grad = True
      t.grad = None

    with Tape() as tape:
      loss = fn()
    if not np.isfinite(loss.data):
      raise NonFiniteError("loss", ())
    tape.backward(loss)
    analytic: dict[str, Array] = {
      name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
      for name, t in inputs.items()
    }

    checks: list[TensorCheck] = []
    for name, tensor in inputs.items():
      flat_count = tensor.size
      if max_elements is not None and flat_count > max_elements:
        positions = rng.choice(flat_count, size=max_elements, replace=False)
      else:
        positions = np.arange(flat_count)

      base = tensor.data
      worst = 0.0
      for flat in positions:
        index = tuple(int(i) for i in np.unravel_index(flat, tensor.shape))
        plus = base.copy()
        plus[index] += eps
        tensor.data = plus
        f_plus = _evaluate(fn)
        minus = base.copy()
        minus[index] -= eps
        tensor.data = minus
        f_minus = _evaluate(fn)
        tensor.data = base
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
          raise NonFiniteError(name, index)
        numeric = (f_plus - f_minus) / (2 * eps)
        worst = max(
          worst, relative_error(float(analytic[name][index]), numeric, floor)
        )
      checks.append(
        TensorCheck(
          name=name,
          checked=len(positions),
          max_rel_error=worst,
          passed=worst < tol,
        )
      )
    return GradCheckReport(tol=tol, checks=checks)
  finally:
    for name, t in inputs.items():
      t.data = originals[name]
      t.requires_grad = flags[name]
