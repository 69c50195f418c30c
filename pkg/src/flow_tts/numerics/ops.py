"""
Differentiable primitives over `Tensor`.

Each primitive computes its forward value with numpy and hands a backward
rule to `record`. Python scalars and raw arrays are lifted to constant
tensors in the dtype of the tensor operand, so 32-bit graphs stay 32-bit.
"""

from __future__ import annotations

import builtins
from collections.abc import Sequence
from types import EllipsisType

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from flow_tts.numerics.tensor import Array, ShapeError, Tensor, record

type Operand = Tensor | float | int | Array
type Index = (
  int
  | builtins.slice
  | EllipsisType
  | None
  | tuple[int | builtins.slice | EllipsisType | None, ...]
)
type Axis = int | tuple[int, ...] | None


def constant(value: Operand, like: Tensor | None = None) -> Tensor:
  if isinstance(value, Tensor):
    return value
  dtype = like.dtype if like is not None else None
  return Tensor(np.asarray(value, dtype=dtype))


def _pair(a: Operand, b: Operand) -> tuple[Tensor, Tensor]:
  like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
  return constant(a, like), constant(b, like)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
  if grad.shape == shape:
    return grad
  extra = grad.ndim - len(shape)
  if extra > 0:
    grad = grad.sum(axis=tuple(range(extra)))
  axes = tuple(
    i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1
  )
  if axes:
    grad = grad.sum(axis=axes, keepdims=True)
  return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
  try:
    _ = np.broadcast_shapes(a.shape, b.shape)
  except ValueError:
    raise ShapeError(op, a.shape, b.shape) from None


def _normalize_axis(axis: int, ndim: int) -> int:
  return axis + ndim if axis < 0 else axis


# Elementwise arithmetic


def add(a: Operand, b: Operand) -> Tensor:
  x, y = _pair(a, b)
  _check_broadcast("add", x, y)
  return record(
    "add",
    x.data + y.data,
    (x, y),
    lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
  )


def sub(a: Operand, b: Operand) -> Tensor:
  x, y = _pair(a, b)
  _check_broadcast("sub", x, y)
  return record(
    "sub",
    x.data - y.data,
    (x, y),
    lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
  )


def mul(a: Operand, b: Operand) -> Tensor:
  x, y = _pair(a, b)
  _check_broadcast("mul", x, y)
  return record(
    "mul",
    x.data * y.data,
    (x, y),
    lambda g: (
      _unbroadcast(g * y.data, x.shape),
      _unbroadcast(g * x.data, y.shape),
    ),
  )


def div(a: Operand, b: Operand) -> Tensor:
  x, y = _pair(a, b)
  _check_broadcast("div", x, y)
  out = x.data / y.data
  return record(
    "div",
    out,
    (x, y),
    lambda g: (
      _unbroadcast(g / y.data, x.shape),
      _unbroadcast(-g * out / y.data, y.shape),
    ),
  )


def neg(x: Tensor) -> Tensor:
  return record("neg", -x.data, (x,), lambda g: (-g,))


def pow(x: Tensor, exponent: float) -> Tensor:
  return record(
    "pow",
    x.data**exponent,
    (x,),
    lambda g: (g * exponent * x.data ** (exponent - 1),),
  )


def sin(x: Tensor) -> Tensor:
  return record("sin", np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x: Tensor) -> Tensor:
  return record("cos", np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def exp(x: Tensor) -> Tensor:
  out = np.exp(x.data)
  return record("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
  return record("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
  positive = x.data > 0
  return record(
    "relu", np.where(positive, x.data, 0), (x,), lambda g: (g * positive,)
  )


def sigmoid(x: Tensor) -> Tensor:
  out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
  return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def where(condition: npt.ArrayLike, x: Tensor, fill: float = 0.0) -> Tensor:
  """
  Selects `x` where `condition` holds and the constant `fill` elsewhere

  Unlike multiplying by a 0/1 mask this never propagates NaN or inf from
  the unselected positions.
  """
  keep = np.asarray(condition, dtype=bool)
  try:
    out = np.where(keep, x.data, np.asarray(fill, dtype=x.dtype))
  except ValueError:
    raise ShapeError("where", keep.shape, x.shape) from None
  return record(
    "where",
    out,
    (x,),
    lambda g: (_unbroadcast(np.where(keep, g, 0), x.shape),),
  )


def detach(x: Tensor) -> Tensor:
  """Same values, cut from the gradient path."""
  return Tensor(x.data)


# Reductions and broadcasting


def _expand_reduced(
  g: Array, shape: tuple[int, ...], axis: Axis, keepdims: bool
) -> Array:
  if axis is not None and not keepdims:
    axes = (axis,) if isinstance(axis, int) else axis
    g = np.expand_dims(g, tuple(_normalize_axis(a, len(shape)) for a in axes))
  return np.broadcast_to(g, shape)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
  return record(
    "sum",
    np.sum(x.data, axis=axis, keepdims=keepdims),
    (x,),
    lambda g: (_expand_reduced(g, x.shape, axis, keepdims),),
  )


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
  out = np.mean(x.data, axis=axis, keepdims=keepdims)
  count = x.size // max(int(np.size(out)), 1) if x.size else 1
  return record(
    "mean",
    out,
    (x,),
    lambda g: (_expand_reduced(g, x.shape, axis, keepdims) / count,),
  )


def broadcast(x: Tensor, shape: Sequence[int]) -> Tensor:
  target = tuple(shape)
  try:
    out = np.broadcast_to(x.data, target)
  except ValueError:
    raise ShapeError("broadcast", x.shape, target) from None
  return record("broadcast", out, (x,), lambda g: (_unbroadcast(g, x.shape),))


# Linear algebra


def _swap_last(a: Array) -> Array:
  return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
  if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
    raise ShapeError("matmul", a.shape, b.shape)
  try:
    out = np.matmul(a.data, b.data)
  except ValueError:
    raise ShapeError("matmul", a.shape, b.shape) from None

  def rule(g: Array) -> tuple[Array | None, Array | None]:
    ga = (
      _unbroadcast(np.matmul(g, _swap_last(b.data)), a.shape)
      if a.requires_grad
      else None
    )
    gb = (
      _unbroadcast(np.matmul(_swap_last(a.data), g), b.shape)
      if b.requires_grad
      else None
    )
    return ga, gb

  return record("matmul", out, (a, b), rule)


def conv1d(
  x: Tensor,
  weight: Tensor,
  stride: int = 1,
  padding: int | tuple[int, int] = 0,
) -> Tensor:
  """
  Cross-correlation of `x` [B, C_in, T] with `weight` [C_out, C_in, K]

  `padding` zero-pads the time axis (left, right); output is
  [B, C_out, (T + left + right - K) // stride + 1].
  """
  left, right = (padding, padding) if isinstance(padding, int) else padding
  if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
    raise ShapeError("conv1d", x.shape, weight.shape)
  kernel = weight.shape[2]
  padded_length = x.shape[2] + left + right
  if padded_length < kernel or stride < 1:
    raise ShapeError("conv1d", x.shape, weight.shape)

  padded = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
  windows = sliding_window_view(padded, kernel, axis=2)[:, :, ::stride, :]
  out_length = windows.shape[2]
  # [B, T_out, C_out] -> [B, C_out, T_out]
  out = np.tensordot(windows, weight.data, axes=((1, 3), (1, 2)))
  out = np.ascontiguousarray(out.transpose(0, 2, 1))

  def rule(g: Array) -> tuple[Array | None, Array | None]:
    gw = (
      np.tensordot(g, windows, axes=((0, 2), (0, 2)))
      if weight.requires_grad
      else None
    )
    gx = None
    if x.requires_grad:
      # [B, T_out, C_in, K]
      gwin = np.tensordot(g, weight.data, axes=((1,), (0,)))
      gpad = np.zeros_like(padded)
      span = stride * (out_length - 1) + 1
      for k in range(kernel):
        gpad[:, :, k : k + span : stride] += gwin[:, :, :, k].transpose(
          0, 2, 1
        )
      gx = gpad[:, :, left : left + x.shape[2]]
    return gx, gw

  return record("conv1d", out, (x, weight), rule)


# Shape manipulation


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
  order = tuple(axes)
  if sorted(_normalize_axis(a, x.ndim) for a in order) != list(range(x.ndim)):
    raise ShapeError(f"transpose{order}", x.shape)
  inverse = tuple(np.argsort([_normalize_axis(a, x.ndim) for a in order]))
  return record(
    "transpose",
    np.transpose(x.data, order),
    (x,),
    lambda g: (np.transpose(g, inverse),),
  )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
  try:
    out = x.data.reshape(tuple(shape))
  except ValueError:
    raise ShapeError("reshape", x.shape, tuple(shape)) from None
  return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
  parts = tuple(tensors)
  if not parts:
    raise ShapeError("concat")
  axis = _normalize_axis(axis, parts[0].ndim)
  try:
    out = np.concatenate([t.data for t in parts], axis=axis)
  except ValueError:
    raise ShapeError("concat", *(t.shape for t in parts)) from None
  bounds = np.cumsum([t.shape[axis] for t in parts])[:-1]
  return record(
    "concat",
    out,
    parts,
    lambda g: tuple(np.split(g, bounds, axis=axis)),
  )


def slice(x: Tensor, index: Index) -> Tensor:
  """Basic (non-fancy) indexing: ints, slices with steps, Ellipsis, None."""
  try:
    out = x.data[index]
  except IndexError:
    raise ShapeError(f"slice[{index}]", x.shape) from None

  def rule(g: Array) -> tuple[Array]:
    gx = np.zeros_like(x.data)
    gx[index] = g
    return (gx,)

  return record("slice", out, (x,), rule)


def take(x: Tensor, indices: npt.ArrayLike, axis: int = 0) -> Tensor:
  """
  Gathers entries along `axis` (embedding lookup, duplication)

  Output shape is x.shape[:axis] + indices.shape + x.shape[axis + 1:];
  repeated indices accumulate their gradients.
  """
  idx = np.asarray(indices, dtype=np.int64)
  axis = _normalize_axis(axis, x.ndim)
  extent = x.shape[axis] if x.ndim else 0
  if idx.size and (idx.min() < 0 or idx.max() >= extent):
    raise ShapeError("take (index out of range)", x.shape, idx.shape)
  out = np.take(x.data, idx, axis=axis)

  def rule(g: Array) -> tuple[Array]:
    gx = np.zeros_like(x.data)
    moved = np.moveaxis(gx, axis, 0)
    source = np.moveaxis(
      g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim))
    )
    np.add.at(moved, idx, source)
    return (gx,)

  return record("take", out, (x,), rule)


def take_along(x: Tensor, indices: npt.ArrayLike, axis: int) -> Tensor:
  """
  Per-position gather along `axis`, `indices` broadcastable to the output

  `indices` has the same rank as `x`; used to expand per-item token
  vectors to frame rate with item-specific alignments.
  """
  idx = np.asarray(indices, dtype=np.int64)
  axis = _normalize_axis(axis, x.ndim)
  if idx.ndim != x.ndim:
    raise ShapeError("take_along", x.shape, idx.shape)
  if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
    raise ShapeError("take_along (index out of range)", x.shape, idx.shape)
  target = list(x.shape)
  target[axis] = idx.shape[axis]
  try:
    full = np.broadcast_to(idx, tuple(target))
  except ValueError:
    raise ShapeError("take_along", x.shape, idx.shape) from None
  out = np.take_along_axis(x.data, full, axis=axis)

  def rule(g: Array) -> tuple[Array]:
    gx = np.zeros_like(x.data)
    grid = list(np.indices(g.shape, sparse=True))
    grid[axis] = full
    np.add.at(gx, tuple(grid), g)
    return (gx,)

  return record("take_along", out, (x,), rule)


# Normalization


def softmax(x: Tensor, axis: int = -1) -> Tensor:
  shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
  e = np.exp(shifted)
  out = e / np.sum(e, axis=axis, keepdims=True)
  return record(
    "softmax",
    out,
    (x,),
    lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),),
  )


def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
  """Zero-mean unit-variance normalization along `axis` (no affine)."""
  mu = np.mean(x.data, axis=axis, keepdims=True)
  centered = x.data - mu
  inv_std = 1.0 / np.sqrt(np.mean(centered**2, axis=axis, keepdims=True) + eps)
  out = centered * inv_std
  n = x.shape[axis]

  def rule(g: Array) -> tuple[Array]:
    g_sum = np.sum(g, axis=axis, keepdims=True)
    gx_sum = np.sum(g * out, axis=axis, keepdims=True)
    return ((inv_std / n) * (n * g - g_sum - out * gx_sum),)

  return record("layer_norm", out, (x,), rule)
