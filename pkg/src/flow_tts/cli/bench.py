"""
Synthesis speed sweep.

For every (prompt length, steps, repeat) a synthetic prompt is
synthesized and timed. There is no vocoder here, so the real-time
factor is a proxy: wall seconds per second of generated frames at
FRAMES_PER_SECOND.
"""

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from flow_tts import rng
from flow_tts.data.corpus import random_tokens
from flow_tts.net.config import ModelConfig
from flow_tts.net.params import ModelParams
from flow_tts.sampler import DEFAULT_TEMPERATURE
from flow_tts.train.synthesis import synthesize_tokens

logger = logging.getLogger("Bench")

FRAMES_PER_SECOND = 80.0


@dataclass(frozen=True)
class BenchRecord:
  id: str
  tokens: int
  frames: int
  steps: int
  wall_s: float
  nfe: int
  rtf_proxy: float

  @classmethod
  def header(cls) -> list[str]:
    return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class StepsSummary:
  steps: int
  runs: int
  rtf_mean: float
  rtf_std: float
  slope: float
  """seconds per frame, least squares of wall_s on frames"""
  intercept: float

  def describe(self) -> str:
    return (
      f"steps={self.steps} rtf_proxy={self.rtf_mean:.4f}"
      f"±{self.rtf_std:.4f} wall_s={self.slope:.3e}*frames"
      f"{self.intercept:+.3e} (n={self.runs})"
    )


def bench_prompts(
  lengths: Sequence[int], vocab_size: int, seed: rng.Seed
) -> list[tuple[int, np.ndarray]]:
  """
  One fixed token prompt per requested length, in order

  A length listed twice gets two prompts, so every entry of `lengths`
  contributes its own records.
  """
  generator = rng.stream(seed, "bench-prompts")
  return [
    (length, random_tokens(length, vocab_size, generator))
    for length in lengths
  ]


def run_bench(
  params: ModelParams,
  config: ModelConfig,
  lengths: Sequence[int],
  steps_list: Sequence[int],
  repeats: int,
  vocab_size: int,
  seed: rng.Seed = 0,
) -> list[BenchRecord]:
  if not lengths or not steps_list:
    raise ValueError("lengths and steps lists must not be empty")
  if repeats < 1:
    raise ValueError(f"repeats must be at least 1, got {repeats}")
  prompts = bench_prompts(lengths, vocab_size, seed)
  records: list[BenchRecord] = []
  # Repeats run sequentially so timings do not contend
  for index, (length, tokens) in enumerate(prompts):
    for steps in steps_list:
      for repeat in range(repeats):
        result = synthesize_tokens(
          tokens,
          params,
          config,
          steps,
          DEFAULT_TEMPERATURE,
          rng.derive(seed, index, steps, repeat),
        )
        seconds_of_audio = result.n_frames / FRAMES_PER_SECOND
        records.append(
          BenchRecord(
            id=f"p{index}-len{length}-steps{steps}-rep{repeat}",
            tokens=length,
            frames=result.n_frames,
            steps=steps,
            wall_s=result.wall_time,
            nfe=result.nfe,
            rtf_proxy=result.wall_time / seconds_of_audio,
          )
        )
      logger.info(f"{length} tokens at {steps} steps done")
  return records


def summarize(records: Sequence[BenchRecord]) -> list[StepsSummary]:
  """
  RTF proxy mean and std plus a line fit of wall time on frame count,
  per steps setting

  A fit needs at least two distinct frame counts; otherwise its slope
  and intercept are NaN.
  """
  summaries: list[StepsSummary] = []
  for steps in sorted({r.steps for r in records}):
    group = [r for r in records if r.steps == steps]
    rtf = np.array([r.rtf_proxy for r in group])
    frames = np.array([r.frames for r in group], dtype=np.float64)
    wall = np.array([r.wall_s for r in group])
    if np.unique(frames).size >= 2:
      slope, intercept = np.polyfit(frames, wall, deg=1)
    else:
      slope, intercept = math.nan, math.nan
    summaries.append(
      StepsSummary(
        steps=steps,
        runs=len(group),
        rtf_mean=float(rtf.mean()),
        rtf_std=float(rtf.std()),
        slope=float(slope),
        intercept=float(intercept),
      )
    )
  return summaries


def write_bench_csv(path: str | Path, records: Sequence[BenchRecord]) -> Path:
  target = Path(path)
  target.parent.mkdir(parents=True, exist_ok=True)
  with target.open("w", newline="", encoding="utf-8") as out:
    writer = csv.writer(out)
    writer.writerow(BenchRecord.header())
    writer.writerows(astuple(record) for record in records)
  return target
