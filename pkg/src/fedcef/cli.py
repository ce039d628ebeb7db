"""Command-line interface: run one experiment, sweep one key, compare two CSVs."""

from __future__ import annotations

import argparse
import os
import sys

from .harness import ConfigError, compare_runs, read_sections, resolve_config, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcef")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single configured experiment")
    p_run.add_argument("--config", required=True, help="path to an INI config file")
    p_run.add_argument("--out", required=True, help="output CSV path")
    p_run.add_argument("--seed", type=int, default=None, help="override the configured seed")

    p_sweep = sub.add_parser("sweep", help="re-run one config while varying a single key")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--key", required=True, help="dotted key, e.g. compressor.retain or hyper.B")
    p_sweep.add_argument("--values", required=True, help="comma-separated values to substitute")
    p_sweep.add_argument("--out-dir", required=True)

    p_cmp = sub.add_parser("compare", help="summarize two metrics CSVs side by side")
    p_cmp.add_argument("csv_a")
    p_cmp.add_argument("csv_b")
    p_cmp.add_argument("--threshold", type=float, default=None, help="objective threshold for bytes-to-reach")
    return parser


def _cmd_run(args) -> int:
    with open(args.config) as fh:
        sections = read_sections(fh.read())
    if args.seed is not None:
        sections.setdefault("run", {})["seed"] = str(args.seed)
    cfg = resolve_config(sections)
    run_experiment(cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    with open(args.config) as fh:
        base_text = fh.read()
    section, _, key = args.key.partition(".")
    if not key:
        raise ConfigError(f"sweep key must be section.key, got {args.key!r}")
    os.makedirs(args.out_dir, exist_ok=True)
    for raw in args.values.split(","):
        raw = raw.strip()
        sections = read_sections(base_text)
        sections.setdefault(section, {})[key] = raw
        cfg = resolve_config(sections)
        out = os.path.join(args.out_dir, f"{args.key}={raw}.csv")
        run_experiment(cfg, out)
        print(f"wrote {out}")
    return 0


def _cmd_compare(args) -> int:
    summary = compare_runs(args.csv_a, args.csv_b, args.threshold)
    print(summary.render())
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_compare(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
