"""Forward values, shape errors and finite-difference checks of primitives."""

from collections.abc import Callable

import numpy as np
import pytest

from flow_tts.numerics import ops
from flow_tts.numerics.gradcheck import NonFiniteError, grad_check
from flow_tts.numerics.tensor import ShapeError, Tensor

# Using pytest test functions


def matmul_identity_test() -> None:
  a = Tensor([[1.0, 2.0], [3.0, 4.0]])
  out = ops.matmul(a, Tensor(np.eye(2)))
  np.testing.assert_array_equal(out.data, a.data)


def unit_kernel_conv_test() -> None:
  signal = Tensor(np.arange(6.0).reshape(1, 1, 6))
  out = ops.conv1d(signal, Tensor(np.ones((1, 1, 1))))
  np.testing.assert_array_equal(out.data, signal.data)


def strided_conv_length_test() -> None:
  x = Tensor(np.zeros((2, 3, 8)))
  w = Tensor(np.zeros((5, 3, 3)))
  assert ops.conv1d(x, w, stride=2, padding=1).shape == (2, 5, 4)


def uniform_softmax_test() -> None:
  out = ops.softmax(Tensor([0.0, 0.0, 0.0]))
  np.testing.assert_allclose(out.data, [1 / 3] * 3)


def matmul_shape_error_names_operation_test() -> None:
  with pytest.raises(ShapeError) as error:
    ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
  assert "matmul" in str(error.value)
  assert "(2, 3)" in str(error.value)


def add_shape_error_test() -> None:
  with pytest.raises(ShapeError):
    ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def where_blocks_nan_test() -> None:
  """Unselected NaNs contribute neither value nor gradient."""
  x = Tensor([1.0, np.nan, 2.0])
  out = ops.sum(ops.where([True, False, True], x))
  assert out.item() == 3.0


def take_accumulates_repeats_test() -> None:
  table = Tensor(np.arange(6.0).reshape(3, 2))
  out = ops.take(table, [0, 2, 2], axis=0)
  np.testing.assert_array_equal(out.data, [[0, 1], [4, 5], [4, 5]])
  report = grad_check(lambda: ops.sum(ops.take(table, [0, 2, 2])), {"t": table})
  assert report.passed


def sum_of_squares_grad_check_test() -> None:
  x = Tensor(np.random.default_rng(0).uniform(-2, 2, size=(3, 4)))
  report = grad_check(lambda: ops.sum(x * x), {"x": x})
  assert report.max_rel_error < 1e-8


def _random(shape: tuple[int, ...], seed: int) -> Tensor:
  return Tensor(np.random.default_rng(seed).uniform(-2.0, 2.0, size=shape))


def _weights(shape: tuple[int, ...]) -> np.ndarray:
  return np.random.default_rng(99).uniform(-1.0, 1.0, size=shape)


UNARY: dict[str, Callable[[Tensor], Tensor]] = {
  "sin": ops.sin,
  "cos": ops.cos,
  "exp": ops.exp,
  "sigmoid": ops.sigmoid,
  "softmax": lambda x: ops.softmax(x, axis=-1),
  "layer_norm": lambda x: ops.layer_norm(x, axis=-1),
  "mean": lambda x: ops.mean(x, axis=0, keepdims=True),
  "transpose": lambda x: ops.transpose(x, (1, 0)),
  "reshape": lambda x: ops.reshape(x, (4, 3)),
  "slice": lambda x: x[1:, ::2],
  "pow": lambda x: ops.pow(x * x + 1.0, -0.5),
  "log": lambda x: ops.log(x * x + 0.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def unary_primitive_gradient_test(name: str) -> None:
  x = _random((3, 4), seed=1)
  fn = UNARY[name]
  weights = _weights(fn(x).shape)
  report = grad_check(lambda: ops.sum(fn(x) * weights), {"x": x}, tol=1e-5)
  assert report.passed, report.failures()


def binary_primitive_gradients_test() -> None:
  a = _random((3, 4), seed=2)
  b = _random((4,), seed=3)
  c = Tensor(np.random.default_rng(4).uniform(0.5, 2.0, size=(3, 4)))
  weights = _weights((3, 4))
  for fn in (
    lambda: ops.sum((a + b) * weights),
    lambda: ops.sum((a - b) * weights),
    lambda: ops.sum(a * b * weights),
    lambda: ops.sum(a / c * weights),
  ):
    report = grad_check(fn, {"a": a, "b": b, "c": c}, tol=1e-5)
    assert report.passed, report.failures()


def matmul_and_conv_gradients_test() -> None:
  a = _random((2, 3, 4), seed=5)
  b = _random((4, 5), seed=6)
  x = _random((2, 3, 7), seed=7)
  w = _random((4, 3, 3), seed=8)
  report = grad_check(
    lambda: ops.sum((a @ b) * _weights((2, 3, 5))), {"a": a, "b": b}
  )
  assert report.passed, report.failures()
  report = grad_check(
    lambda: ops.sum(
      ops.conv1d(x, w, stride=2, padding=1) * _weights((2, 4, 4))
    ),
    {"x": x, "w": w},
  )
  assert report.passed, report.failures()


def concat_broadcast_take_along_gradients_test() -> None:
  a = _random((2, 3), seed=9)
  b = _random((2, 2), seed=10)
  row = _random((1, 3), seed=11)
  index = np.array([[0, 0, 2, 1], [1, 2, 2, 0]])
  report = grad_check(
    lambda: ops.sum(ops.concat([a, b], axis=1) * _weights((2, 5)))
    + ops.sum(ops.broadcast(row, (4, 3)) * _weights((4, 3)))
    + ops.sum(ops.take_along(a, index, axis=1) * _weights((2, 4))),
    {"a": a, "b": b, "row": row},
  )
  assert report.passed, report.failures()


def grad_check_reports_non_finite_test() -> None:
  x = Tensor([0.0, 1.0])
  with pytest.raises(NonFiniteError):
    grad_check(lambda: ops.sum(ops.log(x)), {"x": x})


def grad_check_restores_inputs_test() -> None:
  x = Tensor(np.ones(3, dtype=np.float32))
  _ = grad_check(lambda: ops.sum(x * x), {"x": x})
  assert x.dtype == np.float32
  assert not x.requires_grad
