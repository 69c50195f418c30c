import json
from typing import Any

from pydantic import BaseModel, ValidationError

from flow_tts.utils.result import Err, Ok, Result


def decode_model[m: BaseModel](model: type[m], data: Any) -> Result[m, str]:
  match data:
    case dict(fields):  # pyright: ignore[reportUnknownVariableType]
      try:
        return Ok(model(**fields))
      except ValidationError as e:
        return Err(str(e))
    case _:
      return Err("Only json objects can be decoded into a pydantic model")


def decode_json_line[m: BaseModel](model: type[m], line: str) -> Result[m, str]:
  """
  Decodes one JSON-lines record into `model`
  """
  try:
    data = json.loads(line)
  except json.JSONDecodeError as e:
    return Err(f"Invalid JSON: {e}")
  return decode_model(model, data)
