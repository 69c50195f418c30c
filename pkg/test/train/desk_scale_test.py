"""
End-to-end run on the synthetic corpus with the toy preset.

Takes minutes; runs only with FLOW_TTS_SLOW_TESTS=1.
"""

from dataclasses import dataclass

import numpy as np
import pytest

from flow_tts.align import durations_from_path
from flow_tts.config import RunConfig, slow_tests_enabled
from flow_tts.data.corpus import Utterance, synth_corpus, token_signatures
from flow_tts.net.model import init_params
from flow_tts.net.params import ModelParams
from flow_tts.sampler import DEFAULT_TEMPERATURE
from flow_tts.train.loop import Losses, Trainer, align_utterance
from flow_tts.train.synthesis import synthesize_tokens

# Using pytest test functions

UPDATES = 2000
CHECKED = 20
SEEDS = 8


def _signature_error(
  params: ModelParams,
  config: RunConfig,
  utterances: list[Utterance],
  signatures: np.ndarray,
) -> float:
  """Mean L2 distance between per-token frame means and signatures"""
  distances: list[float] = []
  for i, utt in enumerate(utterances):
    result = synthesize_tokens(utt.tokens, params, config.model, 10, seed=i)
    bounds = np.cumsum(result.durations.d)[:-1]
    segments = np.split(result.frames, bounds, axis=1)
    for token, segment in zip(utt.tokens, segments):
      distances.append(
        float(np.linalg.norm(segment.mean(axis=1) - signatures[token]))
      )
  return float(np.mean(distances))


@dataclass
class ToyRun:
  config: RunConfig
  corpus: list[Utterance]
  trainer: Trainer
  history: list[Losses]


@pytest.fixture(scope="module")
def toy_run() -> ToyRun:
  config = RunConfig.preset("toy")
  data = config.data
  corpus = synth_corpus(
    data.n_utts, data.vocab_size, config.model.n_mel, data.seed
  )
  trainer = Trainer(config, corpus)
  history = trainer.run(UPDATES, progress=False)
  return ToyRun(config, corpus, trainer, history)


@pytest.mark.skipif(not slow_tests_enabled(), reason="slow end-to-end run")
def toy_training_learns_the_corpus_test(toy_run: ToyRun) -> None:
  config, corpus, trainer = toy_run.config, toy_run.corpus, toy_run.trainer
  data = config.data

  early = toy_run.history[9].total
  late = float(np.mean([losses.total for losses in toy_run.history[-10:]]))
  assert late < 0.5 * early

  matched = total = 0
  for utt in corpus:
    assert utt.true_durations is not None
    path = align_utterance(utt, trainer.params, config.model)
    found = durations_from_path(path).d
    matched += int(np.sum(found == utt.true_durations.d))
    total += utt.n_tokens
  assert matched / total >= 0.95

  signatures = token_signatures(
    data.vocab_size, config.model.n_mel, data.seed
  )
  checked = corpus[:CHECKED]
  trained = _signature_error(trainer.params, config, checked, signatures)
  baseline = _signature_error(
    init_params(config.model, 123), config, checked, signatures
  )
  assert baseline >= 5 * trained


@pytest.mark.skipif(not slow_tests_enabled(), reason="slow end-to-end run")
def lower_temperature_concentrates_samples_test(toy_run: ToyRun) -> None:
  tokens = toy_run.corpus[0].tokens
  spreads: list[float] = []
  for temperature in (1.0, DEFAULT_TEMPERATURE, 0.1):
    samples = np.stack(
      [
        synthesize_tokens(
          tokens,
          toy_run.trainer.params,
          toy_run.config.model,
          10,
          temperature,
          seed,
        ).frames
        for seed in range(SEEDS)
      ]
    )
    spreads.append(float(samples.var(axis=0).mean()))
  assert spreads[0] > spreads[1] > spreads[2]
