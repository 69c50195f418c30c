"""Joint training step and the trainer."""

import math

import numpy as np
import pytest

from flow_tts import rng
from flow_tts.align import AlignmentPath, log_prior_matrix, mas
from flow_tts.cfm import OtCfmConfig
from flow_tts.config import RunConfig
from flow_tts.data.batching import Batch, collate
from flow_tts.data.corpus import Utterance
from flow_tts.net.encoder import encoder_forward
from flow_tts.net.model import init_params
from flow_tts.numerics.tensor import Tape, Tensor
from flow_tts.train import loop
from flow_tts.train.checkpoint import (
  Checkpoint,
  decode_checkpoint,
  encode_checkpoint,
)
from flow_tts.train.loop import (
  Losses,
  NonFiniteLossError,
  NonFiniteParamsError,
  Trainer,
  align_batch,
  align_utterance,
  compute_losses,
  train_step,
)
from flow_tts.train.optim import AdamState, collect_gradients
from flow_tts.utils.result import expect

# Using pytest test functions


def train_step_updates_parameters_test(
  tiny_run: RunConfig, tiny_corpus: list[Utterance]
) -> None:
  params = init_params(tiny_run.model, 0)
  before = {name: t.data.copy() for name, t in params.items()}
  result = train_step(
    collate(tiny_corpus[:4]),
    params,
    AdamState.zeros(params),
    tiny_run.model,
    tiny_run.train,
  )
  assert result.adam.step == 1
  assert all(
    math.isfinite(v)
    for v in (result.losses.prior, result.losses.duration, result.losses.cfm)
  )
  assert result.grad_norm > 0
  assert any(not np.array_equal(before[n], t.data) for n, t in params.items())
  assert params.all_finite()


def align_batch_matches_single_utterances_test(
  tiny_run: RunConfig, tiny_corpus: list[Utterance]
) -> None:
  params = init_params(tiny_run.model, 0)
  utts = tiny_corpus[:3]
  batch = collate(utts)
  encoded = encoder_forward(
    batch.tokens, params, tiny_run.model, batch.token_mask
  )
  frames = batch.frames.astype(np.float32)
  paths = align_batch(frames, encoded.mu.data, batch)
  for utt, path in zip(utts, paths):
    single = align_utterance(utt, params, tiny_run.model)
    assert path.n_frames == utt.n_frames
    assert path.n_tokens == utt.n_tokens
    np.testing.assert_array_equal(path.frame_to_token, single.frame_to_token)


def losses_row_test() -> None:
  losses = Losses(prior=1.5, duration=0.25, cfm=2.0)
  assert losses.total == 3.75
  assert losses.as_row(3) == ["3", "1.5", "0.25", "2.0", "3.75"]


def non_finite_loss_names_the_term_test() -> None:
  error = NonFiniteLossError("cfm", math.nan)
  assert error.term == "cfm"
  assert "cfm" in str(error)


@pytest.mark.parametrize(
  ("poisoned", "term"),
  [("encoder.proj_mu.bias", "prior"), ("decoder.time.fc1.bias", "cfm")],
)
def train_step_reports_the_non_finite_term_test(
  tiny_run: RunConfig, tiny_corpus: list[Utterance], poisoned: str, term: str
) -> None:
  params = init_params(tiny_run.model, 0)
  params[poisoned].data = np.full_like(params[poisoned].data, np.nan)
  with pytest.raises(NonFiniteLossError) as caught:
    _ = train_step(
      collate(tiny_corpus[:4]),
      params,
      AdamState.zeros(params),
      tiny_run.model,
      tiny_run.train,
    )
  assert caught.value.term == term


def train_step_rejects_non_finite_parameters_test(
  tiny_run: RunConfig, tiny_corpus: list[Utterance]
) -> None:
  # model_copy skips validation, so the step itself must catch this
  train = tiny_run.train.model_copy(update={"learning_rate": math.inf})
  params = init_params(tiny_run.model, 0)
  with pytest.raises(NonFiniteParamsError) as caught:
    _ = train_step(
      collate(tiny_corpus[:4]),
      params,
      AdamState.zeros(params),
      tiny_run.model,
      train,
    )
  assert caught.value.names


def _step_gradients(
  run: RunConfig, batch: Batch
) -> tuple[list[AlignmentPath], dict[str, np.ndarray]]:
  params = init_params(run.model, 0).track(True)
  with Tape() as tape:
    terms = compute_losses(
      batch,
      params,
      run.model,
      OtCfmConfig(sigma_min=run.train.sigma_min),
      rng.derive(run.train.seed, 1),
    )
    total = terms.total
  tape.backward(total)
  return terms.paths, collect_gradients(params)


def alignment_is_constant_within_a_step_test(
  tiny_run: RunConfig,
  tiny_corpus: list[Utterance],
  monkeypatch: pytest.MonkeyPatch,
) -> None:
  batch = collate(tiny_corpus[:3])
  paths, grads = _step_gradients(tiny_run, batch)
  calls: list[int] = []

  def lowered_off_path(frames: np.ndarray, mu: np.ndarray) -> Tensor:
    log_lik = log_prior_matrix(frames, mu).data
    path = mas(log_lik)
    off_path = np.ones(log_lik.shape, dtype=bool)
    off_path[path.frame_to_token, np.arange(path.n_frames)] = False
    calls.append(1)
    return Tensor(np.where(off_path, log_lik - 1e-3, log_lik))

  monkeypatch.setattr(loop, "log_prior_matrix", lowered_off_path)
  perturbed_paths, perturbed_grads = _step_gradients(tiny_run, batch)

  assert len(calls) == batch.size
  for path, again in zip(paths, perturbed_paths):
    np.testing.assert_array_equal(path.frame_to_token, again.frame_to_token)
  assert grads.keys() == perturbed_grads.keys()
  for name, g in grads.items():
    np.testing.assert_array_equal(g, perturbed_grads[name])


def trainer_runs_and_checkpoints_test(
  tiny_run: RunConfig, tiny_corpus: list[Utterance]
) -> None:
  trainer = Trainer(tiny_run, tiny_corpus)
  saved: list[int] = []
  steps: list[int] = []
  history = trainer.run(
    7,
    on_step=lambda update, _: steps.append(update),
    on_checkpoint=lambda ckpt: saved.append(ckpt.update),
    progress=False,
  )
  assert len(history) == 7
  assert steps == list(range(1, 8))
  assert saved == [5, 7]
  assert trainer.update == 7
  assert all(math.isfinite(losses.total) for losses in history)


def resume_replays_the_uninterrupted_run_test(
  tiny_run: RunConfig, tiny_corpus: list[Utterance]
) -> None:
  straight = Trainer(tiny_run, tiny_corpus).run(15, progress=False)

  first = Trainer(tiny_run, tiny_corpus)
  head = first.run(5, progress=False)
  stored = encode_checkpoint(first.checkpoint())
  restored: Checkpoint = expect(decode_checkpoint(stored, tiny_run.model))
  tail = Trainer(tiny_run, tiny_corpus, restored).run(15, progress=False)

  assert len(tail) == 10
  assert head + tail == straight


def poisoned_padding_changes_nothing_test(
  tiny_run: RunConfig, tiny_corpus: list[Utterance]
) -> None:
  poisoned = tiny_run.model_copy(
    update={
      "data": tiny_run.data.model_copy(update={"poison_padding": True})
    }
  )
  clean = Trainer(tiny_run, tiny_corpus).run(3, progress=False)
  dirty = Trainer(poisoned, tiny_corpus).run(3, progress=False)
  assert dirty == clean


def batches_repeat_per_epoch_order_test(
  tiny_run: RunConfig, tiny_corpus: list[Utterance]
) -> None:
  trainer = Trainer(tiny_run, tiny_corpus)
  assert trainer.batches_per_epoch == 3
  first_epoch = [trainer.batch_for(k).ids for k in range(3)]
  again = Trainer(tiny_run, tiny_corpus)
  assert [again.batch_for(k).ids for k in range(3)] == first_epoch
  covered = sorted(i for ids in first_epoch for i in ids)
  assert covered == sorted(u.id for u in tiny_corpus)


def empty_corpus_test(tiny_run: RunConfig) -> None:
  with pytest.raises(ValueError):
    Trainer(tiny_run, [])
