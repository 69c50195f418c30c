"""Result helpers, pipe and list utilities."""

import pytest
from pydantic import BaseModel

from flow_tts.utils import pipe
from flow_tts.utils.decoding import decode_json_line
from flow_tts.utils.listutils import sized_chunk
from flow_tts.utils.result import (
  Err,
  Ok,
  Result,
  expect,
  map_error,
  unwrap,
  with_unwrap,
)

# Using pytest test functions


def _half(x: int) -> Result[int, str]:
  return Ok(x // 2) if x % 2 == 0 else Err(f"{x} is odd")


@with_unwrap
def _quarter(x: int) -> Result[int, str]:
  return Ok(unwrap(_half(unwrap(_half(x)))))


def with_unwrap_returns_first_error_test() -> None:
  assert _quarter(8) == Ok(2)
  assert _quarter(6) == Err("3 is odd")
  assert _quarter(5) == Err("5 is odd")


def map_error_curried_test() -> None:
  assert pipe(_half(3), map_error(len)) == Err(len("3 is odd"))
  assert pipe(_half(4), map_error(len)) == Ok(2)


def expect_test() -> None:
  assert expect(Ok(1)) == 1
  with pytest.raises(ValueError):
    expect(Err("no"))


def pipe_threads_left_to_right_test() -> None:
  assert pipe(3, lambda x: x + 1, lambda x: x * 10) == 40


def sized_chunk_test() -> None:
  assert sized_chunk(2, [1, 2, 3, 4, 5]) == [[1, 2], [3, 4], [5]]
  assert sized_chunk(3)([1, 2]) == [[1, 2]]
  assert sized_chunk(2, []) == []


class _Point(BaseModel):
  x: int
  y: int


def decode_json_line_test() -> None:
  assert decode_json_line(_Point, '{"x": 1, "y": 2}') == Ok(_Point(x=1, y=2))
  match decode_json_line(_Point, "{oops"):
    case Err(message):
      assert message.startswith("Invalid JSON")
    case Ok(_):
      raise AssertionError("expected Err")
  match decode_json_line(_Point, "[1, 2]"):
    case Err(message):
      assert "json objects" in message
    case Ok(_):
      raise AssertionError("expected Err")
