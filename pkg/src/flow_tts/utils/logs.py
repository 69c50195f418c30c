import logging
import sys

FORMAT = "[%(name)s] %(message)s"


def configure(level: str | int = logging.INFO) -> None:
  """
  Routes all component loggers to stderr as `[Component] message`

  Safe to call more than once; later calls only change the level
  """
  root = logging.getLogger()
  if not any(getattr(h, "_flow_tts", False) for h in root.handlers):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(FORMAT))
    setattr(handler, "_flow_tts", True)
    root.addHandler(handler)
  root.setLevel(level)
