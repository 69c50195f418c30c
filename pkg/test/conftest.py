"""Shared fixtures: small models that run in milliseconds."""

import pytest

from flow_tts.cli.verify import tiny_config
from flow_tts.config import DataConfig, RunConfig, TrainConfig
from flow_tts.data.corpus import Utterance, synth_corpus
from flow_tts.net.config import ModelConfig


@pytest.fixture
def tiny_model() -> ModelConfig:
  return tiny_config()


@pytest.fixture
def tiny_run(tiny_model: ModelConfig) -> RunConfig:
  """Tiny model on a 12-utterance synthetic corpus, checkpoint every 5."""
  return RunConfig(
    model=tiny_model,
    train=TrainConfig(
      learning_rate=1e-3,
      batch_size=4,
      max_updates=10,
      checkpoint_every=5,
      scale="toy",
    ),
    data=DataConfig(n_utts=12, vocab_size=6),
  )


@pytest.fixture
def tiny_corpus(tiny_run: RunConfig) -> list[Utterance]:
  data = tiny_run.data
  return synth_corpus(
    data.n_utts, data.vocab_size, tiny_run.model.n_mel, data.seed
  )
