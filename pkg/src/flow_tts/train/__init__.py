from flow_tts.train.checkpoint import (
  Checkpoint,
  CheckpointError,
  load_checkpoint,
  save_checkpoint,
)
from flow_tts.train.loop import (
  Losses,
  NonFiniteLossError,
  Trainer,
  align_utterance,
  train_step,
)
from flow_tts.train.optim import AdamState
from flow_tts.train.synthesis import Synthesis, synthesize, synthesize_tokens

__all__ = [
  "AdamState",
  "Checkpoint",
  "CheckpointError",
  "Losses",
  "NonFiniteLossError",
  "Synthesis",
  "Trainer",
  "align_utterance",
  "load_checkpoint",
  "save_checkpoint",
  "synthesize",
  "synthesize_tokens",
  "train_step",
]
