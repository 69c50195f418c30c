"""
Dense float tensors and the tape that records operations on them.

A `Tape` is activated with a `with` block. While it is active every
primitive whose inputs require gradients appends a `Node` holding its
inputs, output and backward rule. `backward` walks the nodes in exact
reverse recording order and leaves a gradient on every leaf that requires
one. Outside a tape nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import contextvars
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from types import TracebackType
from typing import TYPE_CHECKING, Any

import numpy as np
import numpy.typing as npt

if TYPE_CHECKING:
  from flow_tts.numerics.ops import Index

type Array = npt.NDArray[np.floating[Any]]
type BackwardRule = Callable[[Array], Sequence[Array | None]]


class ShapeError(ValueError):
  """Operand shapes do not conform for a primitive."""

  op: str
  shapes: tuple[tuple[int, ...], ...]

  def __init__(self, op: str, *shapes: tuple[int, ...]) -> None:
    self.op = op
    self.shapes = shapes
    joined = " and ".join(str(shape) for shape in shapes)
    super().__init__(f"{op}: incompatible shapes {joined}")


class Tensor:
  """
  Row-major float array with an optional gradient

  Tensors are never mutated while recorded on a tape; optimizers swap
  `data` for a fresh array between steps.
  """

  __slots__ = ("data", "requires_grad", "grad", "name")

  data: Array
  requires_grad: bool
  grad: Array | None
  name: str | None

  def __init__(
    self,
    data: Any,
    requires_grad: bool = False,
    name: str | None = None,
    dtype: npt.DTypeLike | None = None,
  ) -> None:
    array = np.asarray(data, dtype=dtype)
    if not np.issubdtype(array.dtype, np.floating):
      array = array.astype(np.float64)
    self.data = array
    self.requires_grad = requires_grad
    self.grad = None
    self.name = name

  @property
  def shape(self) -> tuple[int, ...]:
    return self.data.shape

  @property
  def ndim(self) -> int:
    return self.data.ndim

  @property
  def dtype(self) -> np.dtype[Any]:
    return self.data.dtype

  @property
  def size(self) -> int:
    return int(self.data.size)

  def numpy(self) -> Array:
    return self.data

  def item(self) -> float:
    return float(self.data)

  def __repr__(self) -> str:
    label = f" {self.name!r}" if self.name else ""
    return (
      f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, "
      f"requires_grad={self.requires_grad})"
    )

  def __add__(self, other: Tensor | float) -> Tensor:
    from flow_tts.numerics import ops

    return ops.add(self, other)

  def __radd__(self, other: float) -> Tensor:
    from flow_tts.numerics import ops

    return ops.add(other, self)

  def __sub__(self, other: Tensor | float) -> Tensor:
    from flow_tts.numerics import ops

    return ops.sub(self, other)

  def __rsub__(self, other: float) -> Tensor:
    from flow_tts.numerics import ops

    return ops.sub(other, self)

  def __mul__(self, other: Tensor | float) -> Tensor:
    from flow_tts.numerics import ops

    return ops.mul(self, other)

  def __rmul__(self, other: float) -> Tensor:
    from flow_tts.numerics import ops

    return ops.mul(other, self)

  def __truediv__(self, other: Tensor | float) -> Tensor:
    from flow_tts.numerics import ops

    return ops.div(self, other)

  def __rtruediv__(self, other: float) -> Tensor:
    from flow_tts.numerics import ops

    return ops.div(other, self)

  def __neg__(self) -> Tensor:
    from flow_tts.numerics import ops

    return ops.neg(self)

  def __matmul__(self, other: Tensor) -> Tensor:
    from flow_tts.numerics import ops

    return ops.matmul(self, other)

  def __getitem__(self, index: Index) -> Tensor:
    from flow_tts.numerics import ops

    return ops.slice(self, index)


@dataclass(eq=False)
class Node:
  op: str
  output: Tensor
  inputs: tuple[Tensor, ...]
  rule: BackwardRule


_ACTIVE_TAPE: contextvars.ContextVar[Tape | None] = contextvars.ContextVar(
  "flow_tts_active_tape", default=None
)


class Tape:
  """
  Records primitives executed in the current context

  Confined to the thread (context) that entered it; independent tapes may
  run concurrently on other threads.
  """

  nodes: list[Node]
  _token: contextvars.Token[Tape | None] | None

  def __init__(self) -> None:
    self.nodes = []
    self._token = None

  def __enter__(self) -> Tape:
    self._token = _ACTIVE_TAPE.set(self)
    return self

  def __exit__(
    self,
    exc_type: type[BaseException] | None,
    exc: BaseException | None,
    tb: TracebackType | None,
  ) -> None:
    if self._token is not None:
      _ACTIVE_TAPE.reset(self._token)
      self._token = None

  def backward(self, loss: Tensor) -> list[Tensor]:
    return backward(self, loss)


def active_tape() -> Tape | None:
  return _ACTIVE_TAPE.get()


def record(
  op: str, data: Array, inputs: tuple[Tensor, ...], rule: BackwardRule
) -> Tensor:
  """
  Wraps a forward result, registering `rule` when a tape is listening
  """
  tape = _ACTIVE_TAPE.get()
  tracked = tape is not None and any(t.requires_grad for t in inputs)
  out = Tensor(data, requires_grad=tracked)
  if tracked and tape is not None:
    tape.nodes.append(Node(op, out, inputs, rule))
  return out


def backward(tape: Tape, loss: Tensor) -> list[Tensor]:
  """
  Backpropagates a 0-dimensional `loss` through `tape`

  Sets `.grad` on every leaf (a tensor that requires grad but was not
  produced on this tape) and returns those leaves. The tape is emptied
  afterwards.
  """
  if loss.ndim != 0:
    raise ShapeError("backward (loss must be a scalar)", loss.shape)

  produced = {id(node.output) for node in tape.nodes}
  grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
  leaves: dict[int, Tensor] = {}

  for node in reversed(tape.nodes):
    upstream = grads.pop(id(node.output), None)
    for tensor in node.inputs:
      if tensor.requires_grad and id(tensor) not in produced:
        leaves.setdefault(id(tensor), tensor)
    if upstream is None:
      continue
    for tensor, grad in zip(node.inputs, node.rule(upstream), strict=True):
      if grad is None or not tensor.requires_grad:
        continue
      key = id(tensor)
      if key in grads:
        grads[key] = grads[key] + grad
      else:
        grads[key] = grad

  for key, leaf in leaves.items():
    grad = grads.get(key)
    leaf.grad = (
      np.zeros_like(leaf.data)
      if grad is None
      else np.asarray(grad, dtype=leaf.data.dtype).reshape(leaf.shape)
    )

  tape.nodes.clear()
  return list(leaves.values())
