"""Command-line entry point: synth, augment, train, transcribe, eval."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .acoustic_model import ModelConfig, TrainConfig, forward, load_checkpoint, save_checkpoint, train
from .audio_io import read_wav, write_wav
from .dataset import (SynthConfig, load_dataset_dir, load_notes, load_notes_json, save_labeled_clip,
                      save_notes_json, synth_clip)
from .dsp_augment import AugmentConfig, apply_chain, sample_chain_params
from .eval_metrics import EvalTolerances, aggregate_reports, evaluate
from .features import FeatureConfig, log_mel
from .targets_decode import DecodeConfig, decode_notes

__all__ = ["RunConfig", "ConfigError", "load_run_config", "run", "main"]

SECTIONS = {
    "features": FeatureConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "augment": AugmentConfig,
    "decode": DecodeConfig,
    "eval": EvalTolerances,
}


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfig:
    features: FeatureConfig = FeatureConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    augment: AugmentConfig = AugmentConfig()
    decode: DecodeConfig = DecodeConfig()
    eval: EvalTolerances = EvalTolerances()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        built = {}
        for name, section_cls in SECTIONS.items():
            values = doc.get(name, {})
            if not isinstance(values, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(values) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in section {name!r}: {sorted(bad)}")
            if name == "model" and "n_mels" not in values:
                values = {**values, "n_mels": built["features"].n_mels}
            try:
                built[name] = section_cls(**values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid section {name!r}: {exc}") from None
        return cls(**built)


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    return RunConfig.from_dict(doc)


def _clip_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def cmd_synth(args, _cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        clip = synth_clip(SynthConfig(seed=_clip_seed(args.seed, i), id=f"clip{i:03d}"))
        save_labeled_clip(clip, out)
    print(f"wrote {args.count} clip(s) to {out}", file=sys.stderr)


def cmd_augment(args, cfg: RunConfig):
    clip = read_wav(args.input)
    notes = load_notes_json(args.notes)
    params = sample_chain_params(args.seed, cfg.augment)
    audio, notes_out = apply_chain(clip, notes, params)
    prefix = args.out_prefix
    write_wav(audio, f"{prefix}.wav")
    save_notes_json(notes_out, f"{prefix}.notes.json")
    Path(f"{prefix}.chain.json").write_text(json.dumps(dataclasses.asdict(params), indent=1) + "\n")


def cmd_train(args, cfg: RunConfig):
    tcfg = cfg.train
    if args.steps is not None:
        tcfg = dataclasses.replace(tcfg, total_steps=args.steps)
    if args.seed is not None:
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
    init = load_checkpoint(args.init) if args.init else None
    data = load_dataset_dir(args.data, target_sr=cfg.features.sr)
    ckpt = train(tcfg, cfg.model, data, init=init, fcfg=cfg.features, dcfg=cfg.decode, acfg=cfg.augment)
    save_checkpoint(ckpt, args.out)


def cmd_transcribe(args, cfg: RunConfig):
    ckpt = load_checkpoint(args.ckpt)
    clip = read_wav(args.input, target_sr=cfg.features.sr)
    heads = forward(ckpt.params, log_mel(clip, cfg.features))
    save_notes_json(decode_notes(heads, cfg.decode), args.out)


def cmd_eval(args, cfg: RunConfig):
    if len(args.ref) != len(args.est):
        raise ConfigError(f"got {len(args.ref)} --ref file(s) but {len(args.est)} --est file(s)")
    reports = [evaluate(load_notes(r), load_notes_json(e), cfg.eval, onset_only=args.onset_only)
               for r, e in zip(args.ref, args.est)]
    if len(reports) == 1:
        print(reports[0].to_json())
    else:
        doc = {"per_file": [r.to_dict() for r in reports], **aggregate_reports(reports)}
        print(json.dumps(doc))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="violin-amt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic labeled clips")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="apply one random effects-chain realization")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--notes", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train from scratch or fine-tune with --init")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init")
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transcribe", help="transcribe a WAV file to a note JSON file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("eval", help="score estimated notes against a reference")
    p.add_argument("--ref", nargs="+", required=True)
    p.add_argument("--est", nargs="+", required=True)
    p.add_argument("--onset-only", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "count", 1) is not None and getattr(args, "count", 1) < 0:
        parser.error("--count must be non-negative")
    if getattr(args, "steps", None) is not None and args.steps < 1:
        parser.error("--steps must be >= 1")
    try:
        cfg = load_run_config(getattr(args, "config", None))
        args.func(args, cfg)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
