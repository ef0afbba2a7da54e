"""Command-line entry point: ``generate``, ``run``, ``report``, ``inspect-checkpoint``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .harness import METHODS, ExperimentConfig, ExperimentError, load_records, report, run_experiment
from .storage import FormatError, inspect_checkpoint, write_dataset
from .synth import ConfigError, generate


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "methods", None):
        cfg = replace(cfg, methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=tuple(args.seed))
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def cmd_generate(args) -> int:
    cfg = _config(args)
    synth = cfg.synth if args.seed is None else replace(cfg.synth, seed=args.seed[0])
    out = Path(args.out or "data")
    paths = write_dataset(out, generate(synth), synth)
    for which, p in paths.items():
        print(f"{which}: {p} ({p.stat().st_size} bytes)")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    records = run_experiment(cfg)
    for r in records:
        f = r.final_forgetting
        print(f"{r.method:<13} seed {r.seed}: avg_acc {r.final_avg_acc:.4f}"
              + ("" if f is None else f"  forgetting {f:.4f}"))
    print(f"results written to {cfg.output_dir}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out or ExperimentConfig().output_dir)
    records = load_records(out)
    if not records:
        raise ExperimentError(f"no records under {out / 'records'}")
    for p in report(records, out).values():
        print(p)
    return 0


def cmd_inspect(args) -> int:
    print(json.dumps(inspect_checkpoint(args.path), indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avcil", description="Exemplar-free audio-visual class-incremental learning.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, methods=False):
        sp.add_argument("--config", type=Path, help="JSON experiment config; missing keys take defaults")
        sp.add_argument("--seed", type=int, nargs="+", help="seed(s) overriding the config")
        sp.add_argument("--out", type=Path, help="output directory")
        if methods:
            sp.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")

    g = sub.add_parser("generate", help="write the synthetic dataset files")
    common(g)
    g.set_defaults(func=cmd_generate)
    r = sub.add_parser("run", help="run the incremental benchmark and write reports")
    common(r, methods=True)
    r.set_defaults(func=cmd_run)
    rp = sub.add_parser("report", help="rebuild results.csv, summary.json and the chart from saved records")
    rp.add_argument("--out", type=Path, help="run directory")
    rp.set_defaults(func=cmd_report)
    ic = sub.add_parser("inspect-checkpoint", help="print a checkpoint header summary")
    ic.add_argument("path", type=Path)
    ic.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExperimentError, ConfigError, FormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"avcil: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
