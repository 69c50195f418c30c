"""
Self-check suites run by `flow-tts verify`.

    grad   analytic gradients of every block against central differences
    mas    the alignment DP against exhaustive enumeration
    flow   conditional-flow identities, the zero-loss fixed point and the
           Euler solver's convergence order
    rope   rotary attention logits depend only on relative offsets
"""

import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from flow_tts import rng
from flow_tts.align import (
  duration_loss,
  mas,
  path_score,
  prior_loss,
)
from flow_tts.cfm import (
  OtCfmConfig,
  cfm_loss,
  ot_flow_point,
  ot_target_field,
  sample_path,
)
from flow_tts.net import layers
from flow_tts.net.config import DecoderConfig, EncoderConfig, ModelConfig
from flow_tts.net.decoder import (
  decoder_field,
  decoder_forward,
  resnet_block,
  time_embed,
)
from flow_tts.net.encoder import encoder_forward
from flow_tts.net.model import init_params
from flow_tts.net.params import ModelParams
from flow_tts.numerics import ops
from flow_tts.numerics.gradcheck import grad_check
from flow_tts.numerics.tensor import Array, Tensor
from flow_tts.sampler import euler_solve

logger = logging.getLogger("Verify")

GRAD_TOL = 1e-4
ROPE_TOL = 1e-6
FLOW_DERIVATIVE_TOL = 1e-6
ZERO_LOSS_TOL = 1e-12
MIN_EULER_ORDER = 0.9
MAS_INSTANCES = 100
ROPE_TRIPLES = 100


@dataclass(frozen=True)
class CaseResult:
  suite: str
  name: str
  passed: bool
  detail: str

  def describe(self) -> str:
    status = "ok" if self.passed else "FAIL"
    return f"{status} {self.suite}/{self.name}: {self.detail}"


type Suite = Callable[[int], list[CaseResult]]


def tiny_config() -> ModelConfig:
  """Smallest model that still exercises every block."""
  return ModelConfig(
    n_vocab=8,
    n_mel=4,
    encoder=EncoderConfig(
      channels=8,
      filter_channels=8,
      heads=2,
      layers=1,
      prenet_layers=1,
      duration_channels=8,
    ),
    decoder=DecoderConfig(
      hidden=8,
      heads=1,
      attention_dim=4,
      n_down=1,
      n_mid=1,
      n_up=1,
      groups=2,
      ff_mult=1,
      time_sin_dim=8,
    ),
  )


# Gradients


def _weighted(out: Tensor, seed: int, name: str) -> Tensor:
  """
  Scalar with a non-trivial gradient for every output element; the
  weights are the same on every call
  """
  weights = rng.stream(seed, f"weights:{name}").uniform(
    -1.0, 1.0, size=out.shape
  )
  return ops.sum(out * weights)


def _grad_case(
  name: str,
  fn: Callable[[], Tensor],
  inputs: dict[str, Tensor],
  max_elements: int | None = 6,
) -> CaseResult:
  report = grad_check(fn, inputs, tol=GRAD_TOL, max_elements=max_elements)
  detail = f"max rel err {report.max_rel_error:.2e}"
  failures = report.failures()
  if failures:
    detail += " in " + ", ".join(f.name for f in failures)
  return CaseResult("grad", name, report.passed, detail)


def grad_suite(seed: int) -> list[CaseResult]:
  config = tiny_config()
  params = init_params(config, seed).astype(np.float64)
  draw = rng.stream(seed, "verify-grad")

  def uniform(*shape: int) -> Tensor:
    return Tensor(draw.uniform(-2.0, 2.0, size=shape))

  results: list[CaseResult] = []

  x = uniform(2, 3, 5)
  log_alpha = Tensor(draw.uniform(-0.5, 0.5, size=3))
  log_beta = Tensor(draw.uniform(-0.5, 0.5, size=3))
  results.append(
    _grad_case(
      "snake_beta",
      lambda: _weighted(
        layers.snake_beta(x, log_alpha, log_beta), seed, "snake"
      ),
      {"x": x, "log_alpha": log_alpha, "log_beta": log_beta},
      max_elements=None,
    )
  )

  attn = ModelParams.initialize(
    layers.attention_specs("attn", 8, 8), seed, np.float64
  )
  tokens_in = uniform(1, 5, 8)
  key_mask = np.array([[True, True, True, True, False]])
  results.append(
    _grad_case(
      "rope_attention",
      lambda: _weighted(
        layers.attention(tokens_in, key_mask, attn, "attn", 2, rope=True),
        seed,
        "attention",
      ),
      {"x": tokens_in} | dict(attn.items()),
    )
  )

  frames_in = uniform(1, 2 * config.n_mel, 6)
  keep = np.ones((1, 1, 6), dtype=bool)
  keep[..., 5] = False
  temb = time_embed(np.array([0.3]), params, config)
  prefix = "decoder.down.0.res"
  results.append(
    _grad_case(
      "resnet_block",
      lambda: _weighted(
        resnet_block(
          frames_in, keep, temb, params, prefix, config.decoder.groups
        ),
        seed,
        "resnet",
      ),
      {"x": frames_in} | params.select(prefix),
    )
  )

  tokens = np.array([[2, 5, 3, 7], [4, 6, 0, 0]])
  token_mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]])
  # the duration predictor reads a detached copy of the encoder state,
  # so each output is checked against its own parameters only
  results.append(
    _grad_case(
      "encoder",
      lambda: _weighted(
        encoder_forward(tokens, params, config, token_mask).mu,
        seed,
        "encoder",
      ),
      params.select("encoder"),
    )
  )
  results.append(
    _grad_case(
      "duration_predictor",
      lambda: _weighted(
        encoder_forward(tokens, params, config, token_mask).log_durations,
        seed,
        "duration",
      ),
      params.select("duration"),
    )
  )

  x_t = uniform(2, config.n_mel, 7)
  mu = uniform(2, config.n_mel, 7)
  frame_mask = np.ones((2, 7))
  frame_mask[1, 5:] = 0
  results.append(
    _grad_case(
      "decoder",
      lambda: _weighted(
        decoder_forward(
          x_t, mu, np.array([0.2, 0.7]), params, config, frame_mask
        ),
        seed,
        "decoder",
      ),
      {"x_t": x_t, "mu": mu} | params.select("decoder"),
      max_elements=3,
    )
  )

  target = uniform(2, config.n_mel, 7)
  mu_frames = uniform(2, config.n_mel, 7)
  results.append(
    _grad_case(
      "prior_loss",
      lambda: prior_loss(target, mu_frames, frame_mask),
      {"mu": mu_frames},
      max_elements=None,
    )
  )

  log_d = uniform(2, 4)
  results.append(
    _grad_case(
      "duration_loss",
      lambda: duration_loss(
        log_d, np.array([[2, 3, 1, 4], [5, 2, 1, 1]]), token_mask
      ),
      {"log_d": log_d},
      max_elements=None,
    )
  )

  results.append(
    _grad_case(
      "cfm_loss",
      lambda: cfm_loss(
        target,
        mu_frames,
        frame_mask,
        decoder_field(params, config, frame_mask),
        rng.derive(seed, 1),
      ),
      params.select("decoder"),
      max_elements=2,
    )
  )
  return results


# Alignment


def brute_force_best(log_lik: Array) -> float:
  """Best score over every monotonic surjective path, by enumeration."""
  n_tokens, n_frames = log_lik.shape
  frames = np.arange(n_frames)
  best = -math.inf
  for starts in itertools.combinations(range(1, n_frames), n_tokens - 1):
    path = np.zeros(n_frames, dtype=np.int64)
    for start in starts:
      path[start:] += 1
    best = max(best, float(np.sum(log_lik[path, frames])))
  return best


def mas_suite(seed: int) -> list[CaseResult]:
  draw = rng.stream(seed, "verify-mas")
  agreements = 0
  failures: list[str] = []
  for case in range(MAS_INSTANCES):
    n_tokens = int(draw.integers(1, 6))
    n_frames = int(draw.integers(n_tokens, 9))
    log_lik = draw.standard_normal((n_tokens, n_frames))
    path = mas(log_lik)
    expected = brute_force_best(log_lik)
    found = path_score(log_lik, path)
    if (
      path.n_tokens == n_tokens
      and path.n_frames == n_frames
      and abs(found - expected) <= 1e-9 * max(1.0, abs(expected))
    ):
      agreements += 1
    else:
      failures.append(f"#{case} ({n_tokens}x{n_frames})")
  detail = f"{agreements}/{MAS_INSTANCES} agree with enumeration"
  if failures:
    detail += "; failing " + ", ".join(failures[:5])
  return [CaseResult("mas", "brute_force", not failures, detail)]


# Flow


def _euler_error(n_steps: int) -> tuple[float, int]:
  x0 = Tensor(np.ones((1, 1)))
  report = euler_solve(x0, lambda x, t, c: x, n_steps, x0)
  return abs(float(report.output.data[0, 0]) - math.e), report.nfe


def flow_suite(seed: int) -> list[CaseResult]:
  draw = rng.stream(seed, "verify-flow")
  cfg = OtCfmConfig()
  x0 = draw.standard_normal((3, 4, 5))
  x1 = draw.standard_normal((3, 4, 5))
  results: list[CaseResult] = []

  start = ot_flow_point(x0, x1, 0.0, cfg).data
  results.append(
    CaseResult(
      "flow", "phi_0", bool(np.array_equal(start, x0)), "phi_0 == x0"
    )
  )
  end = ot_flow_point(x0, x1, 1.0, cfg).data
  results.append(
    CaseResult(
      "flow",
      "phi_1",
      bool(np.array_equal(end, cfg.sigma_min * x0 + x1)),
      "phi_1 == sigma_min x0 + x1",
    )
  )

  h = 1e-5
  target = ot_target_field(x0, x1, cfg).data
  worst = 0.0
  for t in (0.1, 0.5, 0.9):
    ahead = ot_flow_point(x0, x1, t + h, cfg).data
    behind = ot_flow_point(x0, x1, t - h, cfg).data
    derivative = (ahead - behind) / (2 * h)
    worst = max(
      worst,
      float(
        np.max(np.abs(derivative - target) / np.maximum(np.abs(target), 1))
      ),
    )
  results.append(
    CaseResult(
      "flow",
      "derivative",
      worst < FLOW_DERIVATIVE_TOL,
      f"max rel err {worst:.2e}",
    )
  )

  data = draw.standard_normal((2, 4, 6))
  mask = np.ones((2, 6))
  mask[1, 4:] = 0
  path_seed = rng.derive(seed, 2)
  path = sample_path(data, mask, cfg, path_seed)
  offset = 0.5
  exact = cfm_loss(
    data,
    Tensor(np.zeros_like(data)),
    mask,
    lambda x, t, mu: path.u_t,
    path_seed,
    cfg,
  ).item()
  shifted = cfm_loss(
    data,
    Tensor(np.zeros_like(data)),
    mask,
    lambda x, t, mu: path.u_t + offset,
    path_seed,
    cfg,
  ).item()
  results.append(
    CaseResult(
      "flow",
      "zero_loss",
      abs(exact) <= ZERO_LOSS_TOL
      and abs(shifted - offset**2) <= ZERO_LOSS_TOL,
      f"target field {exact:.1e}, offset {shifted - offset**2:+.1e}",
    )
  )

  errors = {n: _euler_error(n) for n in (10, 100, 1000)}
  orders = [
    math.log10(errors[coarse][0] / errors[fine][0])
    for coarse, fine in ((10, 100), (100, 1000))
  ]
  nfe_exact = all(nfe == n for n, (_, nfe) in errors.items())
  constant = euler_solve(
    Tensor(np.array([[1.5]])),
    lambda x, t, c: Tensor(np.array([[0.25]])),
    1,
    Tensor(np.zeros((1, 1))),
  )
  results.append(
    CaseResult(
      "flow",
      "euler_order",
      min(orders) >= MIN_EULER_ORDER
      and nfe_exact
      and float(constant.output.data[0, 0]) == 1.75,
      f"observed orders {orders[0]:.3f}, {orders[1]:.3f}",
    )
  )
  return results


# RoPE


def _rotated_logit(q: Array, k: Array, m: int, n: int) -> float:
  rotated_q = layers.rope_rotate(Tensor(q[None, :]), [m]).data[0]
  rotated_k = layers.rope_rotate(Tensor(k[None, :]), [n]).data[0]
  return float(rotated_q @ rotated_k)


def rope_suite(seed: int) -> list[CaseResult]:
  draw = rng.stream(seed, "verify-rope")
  worst = 0.0
  for _ in range(ROPE_TRIPLES):
    q = draw.standard_normal(8)
    k = draw.standard_normal(8)
    m, n = (int(p) for p in draw.integers(0, 64, size=2))
    shift = int(draw.integers(1, 128))
    base = _rotated_logit(q, k, m, n)
    moved = _rotated_logit(q, k, m + shift, n + shift)
    worst = max(worst, abs(base - moved) / max(1.0, abs(base)))
  return [
    CaseResult(
      "rope",
      "relative_offset",
      worst <= ROPE_TOL,
      f"{ROPE_TRIPLES} triples, max rel diff {worst:.2e}",
    )
  ]


SUITES: dict[str, Suite] = {
  "grad": grad_suite,
  "mas": mas_suite,
  "flow": flow_suite,
  "rope": rope_suite,
}


def run_suites(names: list[str], seed: int = 0) -> list[CaseResult]:
  results: list[CaseResult] = []
  for name in names:
    logger.info(f"Running {name} suite")
    results.extend(SUITES[name](seed))
  return results
