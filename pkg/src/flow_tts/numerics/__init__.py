from flow_tts.numerics.gradcheck import (
  GradCheckReport,
  NonFiniteError,
  grad_check,
)
from flow_tts.numerics.tensor import Array, ShapeError, Tape, Tensor, backward

__all__ = [
  "Array",
  "GradCheckReport",
  "NonFiniteError",
  "ShapeError",
  "Tape",
  "Tensor",
  "backward",
  "grad_check",
]
