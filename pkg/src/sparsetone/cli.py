"""Command-line entry point.

Subcommands: prepare, train-model, train-generator, attack, ablation, report.
Experiments are described by a YAML config (see presets.py for the shape); a
config may set `preset: <name>` to inherit one, and `--preset` alone runs a
preset unmodified. Relative output paths resolve against $SPARSETONE_OUT.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .corpus import IngestionError, ManifestError
from .evaluation import parse_report_json, render_report
from .experiment import (ExperimentError, attack_command, prepare_corpus,
                         resolve_path, run_ablation, train_generator_command,
                         train_model_command, write_report_files)
from .presets import get_preset


def load_config(config_path: str | None, preset: str | None,
                seed: int | None = None) -> dict:
    if not config_path and not preset:
        raise ExperimentError("provide --config PATH and/or --preset NAME")
    config: dict = {}
    if preset:
        config = get_preset(preset)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ExperimentError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if "preset" in loaded:
            base = get_preset(loaded.pop("preset"))
            config = _deep_merge(base, loaded) if not preset else _deep_merge(
                _deep_merge(config, base), loaded)
        else:
            config = _deep_merge(config, loaded)
    if seed is not None:
        config["seed"] = int(seed)
    return config


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def _override_dir(config: dict, section: str, out: str | None):
    if out:
        config.setdefault(section, {})["dir"] = out


def cmd_prepare(args) -> int:
    config = load_config(args.config, args.preset, args.seed)
    _override_dir(config, "corpus", args.out)
    manifest = prepare_corpus(config)
    print(f"corpus written: {manifest.parent} ({manifest.name})")
    return 0


def cmd_train_model(args) -> int:
    config = load_config(args.config, args.preset, args.seed)
    _override_dir(config, "model", args.out)
    ckpt = train_model_command(config)
    meta = json.loads((ckpt / "meta.json").read_text())
    print(f"model checkpoint: {ckpt} (val UAR {meta['val_uar']:.4f}, "
          f"{meta['parameter_count']} parameters)")
    return 0


def cmd_train_generator(args) -> int:
    config = load_config(args.config, args.preset, args.seed)
    _override_dir(config, "generator", args.out)
    ckpt = train_generator_command(config)
    meta = json.loads((ckpt / "meta.json").read_text())
    print(f"generator checkpoint: {ckpt} (best val ASR {meta['best_val_asr']:.4f} "
          f"at epoch {meta['best_epoch']})")
    return 0


def cmd_attack(args) -> int:
    config = load_config(args.config, args.preset, args.seed)
    _override_dir(config, "eval", args.out)
    out_dir, report = attack_command(config, limit=args.limit)
    print(render_report(report, "markdown"))
    print(f"results and reports written to {out_dir}")
    return 0


def cmd_ablation(args) -> int:
    config = load_config(args.config, args.preset, args.seed)
    _override_dir(config, "eval", args.out)
    out_dir, report = run_ablation(config)
    print(render_report(report, "markdown"))
    print(f"ablation artifacts written to {out_dir}")
    return 0


def cmd_report(args) -> int:
    config = load_config(args.config, args.preset, args.seed) \
        if (args.config or args.preset) else {}
    out_dir = resolve_path(args.out) if args.out else resolve_path(
        config.get("eval", {}).get("dir", "attack"))
    report_json = Path(out_dir) / "report.json"
    if not report_json.exists():
        raise ExperimentError(f"no report.json under {out_dir}; run an attack first")
    report = parse_report_json(report_json.read_text(encoding="utf-8"))
    write_report_files(report, out_dir)
    print(render_report(report, "markdown"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsetone",
        description="Sparse adversarial attack lab for speech emotion classifiers")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "prepare": (cmd_prepare, "synthesize or preprocess the corpus"),
        "train-model": (cmd_train_model, "train an emotion classifier"),
        "train-generator": (cmd_train_generator, "train the perturbation generator"),
        "attack": (cmd_attack, "run attacks and write results + reports"),
        "ablation": (cmd_ablation, "train and evaluate generator ablations"),
        "report": (cmd_report, "re-render reports from report.json"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="YAML experiment config")
        p.add_argument("--preset", type=str, default=None,
                       help="named preset (see sparsetone.presets)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--limit", type=int, default=None,
                       help="cap the number of attacked clips")
        p.add_argument("--out", type=str, default=None,
                       help="override the command's output directory")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ExperimentError, ManifestError, IngestionError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
