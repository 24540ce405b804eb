"""Batch command-line entry points: synth, train, separate, evaluate, inspect.

Exit codes: 0 success, 1 runtime failure, 2 invalid arguments or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DataConfig, load_scenes, synthesize
from .errors import ConfigError, FlexIOError, InvalidInput
from .metrics import evaluate
from .model import FlexIO, ModelConfig, parameter_breakdown, preset, separate, strict_kwargs
from .stft import read_wav, write_wav
from .training import TrainConfig, train

log = logging.getLogger("flexio")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SECTIONS = ("model", "stft", "train", "data")
REFERENCE_MEDIUM_PARAMS = 3.42e6  # reference size of the medium co-attention model


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def parse_run_config(raw: dict) -> RunConfig:
    """Build a :class:`RunConfig` from the JSON sections; unknown keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    model_raw = dict(raw.get("model", {}))
    name = model_raw.pop("preset", None)
    if "stft" in model_raw:
        raise ConfigError("STFT settings belong in the top-level 'stft' section")
    overrides = strict_kwargs(ModelConfig, model_raw, "model")
    if "stft" in raw:
        overrides["stft"] = raw["stft"]
    try:
        model = preset(name, **overrides) if name is not None else ModelConfig(**overrides)
        train_cfg = TrainConfig(**strict_kwargs(TrainConfig, raw.get("train", {}), "train"))
        data_cfg = DataConfig(**strict_kwargs(DataConfig, raw.get("data", {}), "data"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return RunConfig(model, train_cfg, data_cfg)


def load_run_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(raw)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config)
    data = cfg.data if args.seed is None else DataConfig(**{**cfg.data.to_dict(), "seed": args.seed})
    paths = synthesize(data, args.out_dir)
    for split, manifest in paths.items():
        print(f"{split}: {manifest}")
    return EXIT_OK


def _find_manifest(data_dir: Path, split: str) -> Path | None:
    for candidate in (data_dir / split / "manifest.jsonl", data_dir / f"{split}.jsonl"):
        if candidate.is_file():
            return candidate
    return None


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = TrainConfig(**{**train_cfg.to_dict(), "seed": args.seed})
    data_dir = Path(args.data_dir)
    train_manifest = _find_manifest(data_dir, "train") or (
        data_dir / "manifest.jsonl" if (data_dir / "manifest.jsonl").is_file() else None
    )
    if train_manifest is None:
        raise ConfigError(f"no training manifest under {data_dir}")
    val_manifest = _find_manifest(data_dir, "val")
    train_scenes = load_scenes(train_manifest)
    val_scenes = load_scenes(val_manifest) if val_manifest else []
    seed_everything(train_cfg.seed)
    model = FlexIO(cfg.model)
    out = Path(args.out_dir)
    result = train(model, train_scenes, val_scenes, train_cfg, out)
    save_checkpoint(model, out / "final")
    print(json.dumps({"steps": result.steps, "best_val": result.best_val, "stopped_by": result.stopped_by,
                      "best": str(result.best_dir), "final": str(out / "final")}))
    return EXIT_OK


def cmd_separate(args) -> int:
    if args.num_speakers < 1:
        raise InvalidInput(f"--num-speakers must be >= 1, got {args.num_speakers}")
    model = load_checkpoint(args.checkpoint)
    wave = read_wav(args.in_wav)
    if args.ref_channel is not None and not 0 <= args.ref_channel < wave.shape[0]:
        raise ConfigError(f"reference channel out of range: {args.ref_channel} for {wave.shape[0]} channel(s)")
    if args.seed is not None:
        seed_everything(args.seed)
    result = separate(model, wave.astype(np.float32), args.num_speakers, args.ref_channel)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.in_wav).stem
    for n, w in enumerate(result.waveforms):
        path = out / f"{stem}_spk{n}.wav"
        write_wav(path, w[None])
        print(path)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    scenes = load_scenes(args.manifest)
    if args.seed is not None:
        seed_everything(args.seed)
    table = evaluate(model, scenes, args.report_csv, args.ref_channel)
    for row in table.values():
        print(f"N={row['N']} M={row['M']} count={row['count']} "
              f"SI-SDR={row['mean_sisdr']:.2f} dB SI-SDRi={row['mean_sisdri']:.2f} dB")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = load_checkpoint(args.checkpoint)
    total = sum(p.numel() for p in model.parameters())
    print(json.dumps(model.cfg.to_dict(), indent=2, sort_keys=True))
    print(f"parameters: {total} ({total / 1e6:.3f}M)")
    for name, count in parameter_breakdown(model).items():
        print(f"  {name:<14} {count}")
    print(f"reference medium co-attention size: {REFERENCE_MEDIUM_PARAMS / 1e6:.2f}M parameters; "
          f"this checkpoint is {total / REFERENCE_MEDIUM_PARAMS:.2f}x that (informational)")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flexio", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="seed for every RNG touched by the command")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset and manifests")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model, writing checkpoints and metrics.csv")
    p.add_argument("config")
    p.add_argument("data_dir")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate a WAV file into one WAV per speaker")
    p.add_argument("checkpoint")
    p.add_argument("in_wav")
    p.add_argument("out_dir")
    p.add_argument("--num-speakers", type=int, required=True)
    p.add_argument("--ref-channel", type=int, default=None)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("report_csv")
    p.add_argument("--ref-channel", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="print config and parameter counts of a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("FLEXIO_NUM_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"error: FLEXIO_NUM_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, InvalidInput, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FlexIOError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
