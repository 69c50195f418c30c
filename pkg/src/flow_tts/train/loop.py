"""
Joint training: prior loss, duration loss and OT-CFM loss, summed with
equal weights and minimized with Adam.

Each step aligns every item with MAS on the current encoder means (the
path is a constant), upsamples the means to frame rate with that path,
and hands them to the decoder as the condition. Every random draw of
update k comes from `rng.derive(seed, k)`, so a run resumed at update k
replays the uninterrupted one exactly.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from flow_tts import rng
from flow_tts.align import (
  AlignmentPath,
  duration_loss,
  durations_from_path,
  log_prior_matrix,
  mas,
  prior_loss,
)
from flow_tts.cfm import OtCfmConfig, cfm_loss
from flow_tts.config import RunConfig, TrainConfig
from flow_tts.data.batching import Batch, make_batches
from flow_tts.data.corpus import Utterance
from flow_tts.net.config import ModelConfig
from flow_tts.net.decoder import decoder_field
from flow_tts.net.encoder import encoder_forward
from flow_tts.net.model import init_params
from flow_tts.net.params import ModelParams
from flow_tts.numerics import ops
from flow_tts.numerics.tensor import Tape, Tensor
from flow_tts.train.checkpoint import Checkpoint
from flow_tts.train.optim import (
  AdamState,
  adam_update,
  clip_by_global_norm,
  collect_gradients,
)

logger = logging.getLogger("Trainer")

LOSS_TERMS = ("prior", "duration", "cfm")


class NonFiniteLossError(ArithmeticError):
  term: str
  value: float

  def __init__(self, term: str, value: float) -> None:
    self.term = term
    self.value = value
    super().__init__(f"{term} loss is not finite ({value})")


class NonFiniteParamsError(ArithmeticError):
  names: list[str]

  def __init__(self, names: list[str]) -> None:
    self.names = names
    super().__init__(f"parameters not finite after update: {names}")


@dataclass(frozen=True)
class Losses:
  prior: float
  duration: float
  cfm: float

  @property
  def total(self) -> float:
    return self.prior + self.duration + self.cfm

  def as_row(self, update: int) -> list[str]:
    values = (self.prior, self.duration, self.cfm, self.total)
    return [str(update), *(repr(v) for v in values)]


@dataclass(frozen=True)
class LossTerms:
  """The three differentiable terms of one batch."""

  prior: Tensor
  duration: Tensor
  cfm: Tensor
  paths: list[AlignmentPath]

  @property
  def total(self) -> Tensor:
    return self.prior + self.duration + self.cfm

  def values(self) -> Losses:
    losses = Losses(
      prior=self.prior.item(),
      duration=self.duration.item(),
      cfm=self.cfm.item(),
    )
    for term in LOSS_TERMS:
      value = getattr(losses, term)
      if not math.isfinite(value):
        raise NonFiniteLossError(term, value)
    return losses


@dataclass
class StepResult:
  losses: Losses
  adam: AdamState
  grad_norm: float


def align_batch(
  frames: np.ndarray, mu: np.ndarray, batch: Batch
) -> list[AlignmentPath]:
  """MAS per item on the valid region; frames [B, n_mel, T], mu [B, n_mel, N]"""
  paths: list[AlignmentPath] = []
  for b in range(batch.size):
    n_tokens = int(batch.token_lengths[b])
    n_frames = int(batch.frame_lengths[b])
    log_lik = log_prior_matrix(
      frames[b, :, :n_frames], mu[b, :, :n_tokens]
    )
    paths.append(mas(log_lik))
  return paths


def align_utterance(
  utterance: Utterance, params: ModelParams, config: ModelConfig
) -> AlignmentPath:
  """MAS of one utterance against the current encoder means."""
  encoded = encoder_forward(utterance.tokens, params, config)
  frames = utterance.frames.astype(encoded.mu.dtype)
  return mas(log_prior_matrix(frames, encoded.mu.data[0]))


def compute_losses(
  batch: Batch,
  params: ModelParams,
  config: ModelConfig,
  cfm_config: OtCfmConfig,
  step_seed: rng.Seed,
) -> LossTerms:
  token_keep = batch.token_mask > 0
  frame_keep = batch.frame_mask > 0
  dtype = params["encoder.embedding"].dtype
  # padding may be poisoned; no term may read it
  frames = np.where(frame_keep[:, None, :], batch.frames, 0.0).astype(dtype)

  encoded = encoder_forward(batch.tokens, params, config, token_keep)
  valid_mu = encoded.mu.data.transpose(0, 2, 1)[token_keep]
  if not np.all(np.isfinite(valid_mu)):
    # MAS cannot run on these; report the term they feed
    raise NonFiniteLossError("prior", math.nan)
  paths = align_batch(frames, encoded.mu.data, batch)

  frame_to_token = np.zeros(frame_keep.shape, dtype=np.int64)
  target_durations = np.ones(token_keep.shape, dtype=np.int64)
  for b, path in enumerate(paths):
    frame_to_token[b, : path.n_frames] = path.frame_to_token
    target_durations[b, : path.n_tokens] = durations_from_path(path).d

  mu_frames = ops.where(
    frame_keep[:, None, :],
    ops.take_along(encoded.mu, frame_to_token[:, None, :], axis=2),
  )
  target = Tensor(frames)
  return LossTerms(
    prior=prior_loss(target, mu_frames, frame_keep),
    duration=duration_loss(
      encoded.log_durations, target_durations, token_keep
    ),
    cfm=cfm_loss(
      target,
      mu_frames,
      frame_keep,
      decoder_field(params, config, frame_keep),
      step_seed,
      cfm_config,
    ),
    paths=paths,
  )


def train_step(
  batch: Batch,
  params: ModelParams,
  adam: AdamState,
  model_config: ModelConfig,
  train_config: TrainConfig,
) -> StepResult:
  """
  One update on `batch`; parameters are replaced in place

  The step's randomness derives from (train seed, adam.step + 1).
  """
  step_seed = rng.derive(train_config.seed, adam.step + 1)
  cfm_config = OtCfmConfig(sigma_min=train_config.sigma_min)
  params.track(True)
  with Tape() as tape:
    terms = compute_losses(batch, params, model_config, cfm_config, step_seed)
    total = terms.total
  losses = terms.values()
  tape.backward(total)
  grads, norm = clip_by_global_norm(
    collect_gradients(params), train_config.clip_norm
  )
  updated = adam_update(params, grads, adam, train_config)
  broken = [
    name for name, t in params.items() if not np.all(np.isfinite(t.data))
  ]
  if broken:
    raise NonFiniteParamsError(broken)
  return StepResult(losses=losses, adam=updated, grad_norm=norm)


type StepCallback = Callable[[int, Losses], None]


class Trainer:
  """
  Runs updates over a fixed corpus

  The batch for update k is the (k mod n_batches)-th batch of epoch
  k // n_batches, shuffled with `rng.derive(seed, epoch)`; nothing else
  is carried between updates besides parameters and Adam moments.
  """

  config: RunConfig
  corpus: Sequence[Utterance]
  params: ModelParams
  adam: AdamState
  update: int
  _epoch: int | None
  _epoch_batches: list[Batch]

  def __init__(
    self,
    config: RunConfig,
    corpus: Sequence[Utterance],
    checkpoint: Checkpoint | None = None,
  ) -> None:
    if not corpus:
      raise ValueError("cannot train on an empty corpus")
    self.config = config
    self.corpus = corpus
    if checkpoint is None:
      self.params = init_params(config.model, config.train.seed)
      self.adam = AdamState.zeros(self.params)
      self.update = 0
    else:
      self.params = checkpoint.params
      self.adam = checkpoint.adam
      self.update = checkpoint.update
    self.params.track(True)
    self._epoch = None
    self._epoch_batches = []

  @property
  def batches_per_epoch(self) -> int:
    return -(-len(self.corpus) // self.config.train.batch_size)

  def batch_for(self, update: int) -> Batch:
    """Batch used by the update that takes the counter to `update + 1`."""
    epoch, position = divmod(update, self.batches_per_epoch)
    if epoch != self._epoch:
      self._epoch_batches = make_batches(
        self.corpus,
        self.config.train.batch_size,
        rng.derive(self.config.train.seed, epoch),
        poison_padding=self.config.data.poison_padding,
      )
      self._epoch = epoch
    return self._epoch_batches[position]

  def step(self) -> Losses:
    result = train_step(
      self.batch_for(self.update),
      self.params,
      self.adam,
      self.config.model,
      self.config.train,
    )
    self.adam = result.adam
    self.update += 1
    return result.losses

  def checkpoint(self) -> Checkpoint:
    return Checkpoint(
      config=self.config,
      params=self.params,
      adam=self.adam,
      update=self.update,
    )

  def run(
    self,
    until: int,
    on_step: StepCallback | None = None,
    on_checkpoint: Callable[[Checkpoint], None] | None = None,
    progress: bool = True,
  ) -> list[Losses]:
    """
    Steps until the counter reaches `until`

    `on_checkpoint` fires every `checkpoint_every` updates and once more
    at the end if the last update was not already saved.
    """
    history: list[Losses] = []
    every = self.config.train.checkpoint_every
    start = self.update
    logger.info(
      f"Training updates {start}..{until} on {len(self.corpus)} utterances"
    )
    bar = tqdm(
      total=max(until - start, 0),
      desc="train",
      disable=not progress,
      leave=False,
    )
    try:
      while self.update < until:
        losses = self.step()
        history.append(losses)
        bar.update(1)
        bar.set_postfix({"loss": f"{losses.total:.4f}"})
        if on_step is not None:
          on_step(self.update, losses)
        if on_checkpoint is not None and self.update % every == 0:
          on_checkpoint(self.checkpoint())
    finally:
      bar.close()
    if on_checkpoint is not None and self.update % every != 0:
      on_checkpoint(self.checkpoint())
    if history:
      logger.info(
        f"Finished at update {self.update}, total loss "
        f"{history[-1].total:.4f}"
      )
    return history
