"""
`flow-tts` subcommands.

    train    fit a model, writing checkpoints and a per-update loss CSV
    synth    text to an MTF frames file
    align    MAS alignments and durations for a corpus
    bench    synthesis wall time across prompt lengths and step counts
    verify   built-in gradient, alignment, flow and RoPE checks
    params   parameter count of a preset
    corpus   export a synthetic corpus as a manifest plus MTF files

Commands never prompt. A failure prints one line
`error: <kind>: <message>` to stderr and exits 2 for usage errors, 1
otherwise.
"""

import argparse
import csv
import logging
import re
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

from flow_tts.align import (
  AlignmentError,
  durations_from_path,
  format_alignment,
)
from flow_tts.cli.bench import run_bench, summarize, write_bench_csv
from flow_tts.cli.verify import SUITES, run_suites
from flow_tts.config import (
  DataConfig,
  RunConfig,
  get_log_level,
  load_config_file,
)
from flow_tts.data.corpus import (
  Utterance,
  export_corpus,
  load_entry,
  load_manifest,
  read_manifest,
  synth_corpus,
)
from flow_tts.data.tensor_file import write_tensor_file
from flow_tts.data.vocab import DEFAULT_VOCAB
from flow_tts.net.config import REFERENCE_PARAM_COUNT, ModelConfig
from flow_tts.net.model import preset_param_count
from flow_tts.sampler import DEFAULT_TEMPERATURE
from flow_tts.train.checkpoint import (
  Checkpoint,
  config_difference,
  load_checkpoint,
  save_checkpoint,
)
from flow_tts.train.loop import Losses, Trainer, align_utterance
from flow_tts.train.synthesis import synthesize
from flow_tts.utils import logs
from flow_tts.utils.result import Err, Ok, Result

logger = logging.getLogger("Aligner")

LOSS_HEADER = ["update", "prior", "duration", "cfm", "total"]
PARAM_COUNT_TOLERANCE = 0.2


class CliError(Exception):
  kind: str
  message: str
  code = 1

  def __init__(self, kind: str, message: str) -> None:
    self.kind = kind
    self.message = message
    super().__init__(f"{kind}: {message}")


class UsageError(CliError):
  code = 2

  def __init__(self, message: str) -> None:
    super().__init__("usage", message)


class _Parser(argparse.ArgumentParser):
  def error(self, message: str) -> NoReturn:
    raise UsageError(message)


def _ok[a](result: Result[a, Any]) -> a:
  match result:
    case Ok(value):
      return value
    case Err(str() as message):
      raise CliError("config", message)
    case Err(error):
      raise CliError(error.kind, error.message)


def _kind(error: Exception) -> str:
  """OutOfVocabularyError -> out-of-vocabulary"""
  name = type(error).__name__.removesuffix("Error") or "error"
  return re.sub(r"(?<!^)(?=[A-Z])", "-", name).lower()


# Argument types


def _positive_int(text: str) -> int:
  try:
    value = int(text)
  except ValueError:
    raise argparse.ArgumentTypeError(f"not an integer: '{text}'") from None
  if value < 1:
    raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
  return value


def _positive_float(text: str) -> float:
  try:
    value = float(text)
  except ValueError:
    raise argparse.ArgumentTypeError(f"not a number: '{text}'") from None
  if not value > 0:
    raise argparse.ArgumentTypeError(f"must be positive, got {value}")
  return value


def _int_list(text: str) -> list[int]:
  items = [part.strip() for part in text.split(",") if part.strip()]
  if not items:
    raise argparse.ArgumentTypeError("list must not be empty")
  return [_positive_int(item) for item in items]


# Shared steps


def _run_config(
  args: argparse.Namespace, base: RunConfig | None = None
) -> RunConfig:
  """`--config` (or `base`, or the toy preset) with command-line overrides"""
  if args.config:
    config = _ok(load_config_file(args.config))
  else:
    config = RunConfig() if base is None else base
  train = config.train
  if args.seed is not None:
    train = train.model_copy(update={"seed": args.seed})
  if args.updates is not None:
    train = train.model_copy(update={"max_updates": args.updates})
  data = config.data
  if args.data is not None:
    data = data.model_copy(update={"manifest": str(args.data)})
  elif args.synthetic:
    data = data.model_copy(update={"manifest": None})
  return config.model_copy(update={"train": train, "data": data})


def load_corpus(config: RunConfig) -> list[Utterance]:
  """The run's utterances: its manifest, or the seeded generator."""
  data = config.data
  if data.manifest is None:
    return synth_corpus(
      data.n_utts, data.vocab_size, config.model.n_mel, data.seed
    )
  return _ok(load_manifest(data.manifest, DEFAULT_VOCAB, config.model.n_mel))


def _load_checkpoint(path: Path) -> Checkpoint:
  return _ok(load_checkpoint(path))


def _truncate_loss_log(path: Path, update: int) -> None:
  """Drops rows past `update` so a resumed run does not repeat them."""
  with path.open(newline="") as existing:
    rows = list(csv.reader(existing))
  kept = [
    row
    for row in rows[1:]
    if row and row[0].isdigit() and int(row[0]) <= update
  ]
  with path.open("w", newline="") as out:
    writer = csv.writer(out)
    writer.writerow(LOSS_HEADER)
    writer.writerows(kept)


# Commands


def cmd_train(args: argparse.Namespace) -> int:
  checkpoint = None
  if args.resume is None:
    config = _run_config(args)
  else:
    checkpoint = _load_checkpoint(args.resume)
    config = _run_config(args, base=checkpoint.config)
    mismatch = config_difference(config.model, checkpoint.config.model)
    if mismatch is not None:
      raise CliError(mismatch.kind, mismatch.message)
  corpus = load_corpus(config)
  trainer = Trainer(config, corpus, checkpoint)

  out_dir: Path = args.out
  out_dir.mkdir(parents=True, exist_ok=True)
  loss_path = out_dir / "losses.csv"
  appending = checkpoint is not None and loss_path.exists()
  if checkpoint is not None and appending:
    _truncate_loss_log(loss_path, checkpoint.update)
  saved: list[Path] = []

  def on_checkpoint(ckpt: Checkpoint) -> None:
    saved.append(
      save_checkpoint(out_dir / f"ckpt-{ckpt.update:06d}.mtfc", ckpt)
    )

  with loss_path.open("a" if appending else "w", newline="") as out:
    writer = csv.writer(out)
    if not appending:
      writer.writerow(LOSS_HEADER)

    def on_step(update: int, losses: Losses) -> None:
      writer.writerow(losses.as_row(update))

    trainer.run(
      config.train.max_updates,
      on_step=on_step,
      on_checkpoint=on_checkpoint,
      progress=not args.quiet and sys.stderr.isatty(),
    )

  print(f"updates={trainer.update} losses={loss_path}")
  for path in saved:
    print(f"checkpoint={path}")
  return 0


def cmd_synth(args: argparse.Namespace) -> int:
  checkpoint = _load_checkpoint(args.ckpt)
  synthesis = _ok(
    synthesize(
      args.text,
      checkpoint.params,
      checkpoint.config.model,
      n_steps=args.steps,
      temperature=args.temperature,
      seed=args.seed,
      length_scale=args.length_scale,
    )
  )
  write_tensor_file(args.out, synthesis.frames)
  print(
    f"frames={synthesis.n_frames} nfe={synthesis.nfe} "
    f"wall_s={synthesis.wall_time:.6f}"
  )
  return 0


def _align_inputs(
  args: argparse.Namespace, checkpoint: Checkpoint
) -> tuple[list[tuple[str, Result[Utterance, Any]]], bool]:
  """(id, utterance or error) per item, and whether truth is known"""
  n_mel = checkpoint.config.model.n_mel
  if args.synthetic:
    data = checkpoint.config.data
    corpus = synth_corpus(data.n_utts, data.vocab_size, n_mel, data.seed)
    return [(u.id, Ok(u)) for u in corpus], True
  manifest: Path = args.manifest
  entries = _ok(read_manifest(manifest))
  items = [
    (e.id, load_entry(e, manifest.parent, DEFAULT_VOCAB, n_mel))
    for e in entries
  ]
  return items, bool(entries) and all(e.durations for e in entries)


class BadItemIdError(ValueError):
  def __init__(self, item_id: str) -> None:
    super().__init__(f"id {item_id!r} is not a plain file name")


def _alignment_file_name(item_id: str) -> str:
  if item_id in ("", ".", "..") or Path(item_id).name != item_id:
    raise BadItemIdError(item_id)
  return f"{item_id}.align"


def cmd_align(args: argparse.Namespace) -> int:
  checkpoint = _load_checkpoint(args.ckpt)
  items, with_truth = _align_inputs(args, checkpoint)
  out_dir: Path = args.out
  out_dir.mkdir(parents=True, exist_ok=True)

  header = ["id", "token_index", "token_id", "duration"]
  if with_truth:
    header.append("true_duration")
  matched = compared = failed = 0
  with (
    (out_dir / "durations.csv").open("w", newline="") as durations_file,
    (out_dir / "errors.csv").open("w", newline="") as errors_file,
  ):
    durations = csv.writer(durations_file)
    errors = csv.writer(errors_file)
    durations.writerow(header)
    errors.writerow(["id", "kind", "message"])
    for item_id, loaded in items:
      match loaded:
        case Err(error):
          failed += 1
          logger.warning(f"Skipping {item_id}: {error.message}")
          errors.writerow([item_id, error.kind, error.message])
          continue
        case Ok(utterance):
          pass
      try:
        path = align_utterance(
          utterance, checkpoint.params, checkpoint.config.model
        )
      except AlignmentError as e:
        failed += 1
        logger.warning(f"Skipping {item_id}: {e}")
        errors.writerow([item_id, "alignment", str(e)])
        continue
      try:
        (out_dir / _alignment_file_name(item_id)).write_text(
          format_alignment(path)
        )
      except (ValueError, OSError) as e:
        failed += 1
        logger.warning(f"Skipping {item_id}: {e}")
        errors.writerow([item_id, _kind(e), str(e)])
        continue
      counts = durations_from_path(path).d.tolist()
      for index, token in enumerate(utterance.tokens.tolist()):
        row = [item_id, index, token, counts[index]]
        truth = utterance.true_durations
        if with_truth and truth is not None:
          row.append(int(truth.d[index]))
          compared += 1
          matched += int(truth.d[index] == row[3])
        durations.writerow(row)

  print(f"aligned={len(items) - failed} failed={failed} out={out_dir}")
  if compared:
    print(f"duration_agreement={matched / compared:.4f}")
  return 0


def cmd_bench(args: argparse.Namespace) -> int:
  checkpoint = _load_checkpoint(args.ckpt)
  records = run_bench(
    checkpoint.params,
    checkpoint.config.model,
    args.lengths,
    args.steps_list,
    args.repeats,
    checkpoint.config.data.vocab_size,
    args.seed,
  )
  write_bench_csv(args.out, records)
  print(f"records={len(records)} out={args.out}")
  for summary in summarize(records):
    print(summary.describe())
  return 0


def cmd_verify(args: argparse.Namespace) -> int:
  names = list(SUITES) if args.suite == "all" else [args.suite]
  results = run_suites(names, args.seed)
  for result in results:
    print(result.describe())
  failing = [f"{r.suite}/{r.name}" for r in results if not r.passed]
  if failing:
    raise CliError(
      "verify-failed",
      f"{len(failing)} of {len(results)} cases failed: {', '.join(failing)}",
    )
  return 0


def cmd_params(args: argparse.Namespace) -> int:
  count = preset_param_count(ModelConfig.preset(args.scale))
  print(f"scale={args.scale} params={count} ({count / 1e6:.2f}M)")
  if args.scale == "paper":
    deviation = count / REFERENCE_PARAM_COUNT - 1.0
    print(
      f"reference={REFERENCE_PARAM_COUNT / 1e6:.1f}M "
      f"deviation={deviation:+.1%}"
    )
    if abs(deviation) > PARAM_COUNT_TOLERANCE:
      print(
        "note: the encoder and duration predictor sizes of this preset "
        "are assumptions, so the count may differ from the reference"
      )
  return 0


def cmd_corpus(args: argparse.Namespace) -> int:
  utterances = synth_corpus(
    args.n_utts, args.vocab_size, args.n_mel, args.seed
  )
  manifest = export_corpus(utterances, args.out)
  print(f"utterances={len(utterances)} manifest={manifest}")
  return 0


# Parser


def build_parser() -> argparse.ArgumentParser:
  parser = _Parser(
    prog="flow-tts",
    description="Flow-matching acoustic model: train, synthesize, inspect.",
  )
  commands = parser.add_subparsers(dest="command", required=True)

  train = commands.add_parser("train", help="train a model")
  train.add_argument("--config", type=Path)
  source = train.add_mutually_exclusive_group()
  source.add_argument("--data", type=Path, help="JSON-lines manifest")
  source.add_argument("--synthetic", action="store_true")
  train.add_argument("--out", type=Path, required=True)
  train.add_argument("--seed", type=int)
  train.add_argument("--updates", type=int, help="overrides max_updates")
  train.add_argument("--resume", type=Path, help="checkpoint to continue")
  train.add_argument("--quiet", action="store_true")
  train.set_defaults(handler=cmd_train)

  synth = commands.add_parser("synth", help="synthesize frames for text")
  synth.add_argument("--ckpt", type=Path, required=True)
  synth.add_argument("--text", required=True)
  synth.add_argument("--steps", type=_positive_int, default=10)
  synth.add_argument(
    "--temperature", type=_positive_float, default=DEFAULT_TEMPERATURE
  )
  synth.add_argument("--seed", type=int, default=0)
  synth.add_argument("--length-scale", type=_positive_float, default=1.0)
  synth.add_argument("--out", type=Path, required=True)
  synth.set_defaults(handler=cmd_synth)

  align = commands.add_parser("align", help="MAS durations for a corpus")
  align.add_argument("--ckpt", type=Path, required=True)
  corpus_source = align.add_mutually_exclusive_group(required=True)
  corpus_source.add_argument("--manifest", type=Path)
  corpus_source.add_argument("--synthetic", action="store_true")
  align.add_argument("--out", type=Path, required=True)
  align.set_defaults(handler=cmd_align)

  bench = commands.add_parser("bench", help="synthesis speed sweep")
  bench.add_argument("--ckpt", type=Path, required=True)
  bench.add_argument("--lengths", type=_int_list, default=[10, 50, 200])
  bench.add_argument("--steps-list", type=_int_list, default=[2, 4, 10])
  bench.add_argument("--repeats", type=_positive_int, default=3)
  bench.add_argument("--seed", type=int, default=0)
  bench.add_argument("--out", type=Path, required=True)
  bench.set_defaults(handler=cmd_bench)

  verify = commands.add_parser("verify", help="run self-check suites")
  verify.add_argument(
    "--suite", choices=[*SUITES, "all"], default="all"
  )
  verify.add_argument("--seed", type=int, default=0)
  verify.set_defaults(handler=cmd_verify)

  params = commands.add_parser("params", help="preset parameter count")
  params.add_argument("--scale", choices=["toy", "paper"], default="paper")
  params.set_defaults(handler=cmd_params)

  corpus = commands.add_parser("corpus", help="export a synthetic corpus")
  defaults = DataConfig()
  corpus.add_argument("--out", type=Path, required=True)
  corpus.add_argument("--n-utts", type=_positive_int, default=defaults.n_utts)
  corpus.add_argument(
    "--vocab-size", type=_positive_int, default=defaults.vocab_size
  )
  corpus.add_argument(
    "--n-mel", type=_positive_int, default=ModelConfig.preset("toy").n_mel
  )
  corpus.add_argument("--seed", type=int, default=defaults.seed)
  corpus.set_defaults(handler=cmd_corpus)
  return parser


def main(argv: Sequence[str] | None = None) -> int:
  parser = build_parser()
  try:
    args = parser.parse_args(argv)
    quiet = getattr(args, "quiet", False)
    logs.configure(logging.WARNING if quiet else get_log_level())
    return args.handler(args)
  except CliError as e:
    print(f"error: {e.kind}: {e.message}", file=sys.stderr)
    return e.code
  except (ValueError, ArithmeticError, OSError) as e:
    message = " ".join(str(e).split())
    print(f"error: {_kind(e)}: {message}", file=sys.stderr)
    return 1
