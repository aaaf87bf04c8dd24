"""Command-line entry point ``pbgfluor``."""

from __future__ import annotations

import argparse
import sys

from .config import PRESET_NAMES, ConfigError, apply_overrides, load_preset, parse_config
from .runner import RunError, run, sweep


def _load(args) -> "ExperimentConfig":  # noqa: F821
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = parse_config(args.config)
    elif args.preset:
        cfg = load_preset(args.preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    if args.override:
        cfg = apply_overrides(cfg, args.override)
    cfg.validate()
    return cfg


def _source_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--preset", help="named preset (see list-presets)")
    p.add_argument(
        "--override", "-o", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one configuration value; repeatable",
    )


def _summary(res) -> str:
    lines = []
    for name, s in sorted(res.spectra.items()):
        lines.append(f"{name}: {s.omega.size} points, flags: {';'.join(s.flags) or 'ok'}")
    if res.oracle is not None:
        lines.append(f"oracle: M={res.oracle.bath.M}, horizon={res.oracle.bath.horizon:.4g}")
    lines.append(f"wall time {res.wall_time:.2f} s")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbgfluor", description="Fluorescence spectra of a driven atom in a structured reservoir.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every enabled pipeline")
    _source_args(p)
    p.add_argument("--out", help="output directory (default: output.dir)")

    p = sub.add_parser("sweep", help="repeat a run over values of one parameter")
    _source_args(p)
    p.add_argument("--param", required=True, help="dotted parameter, e.g. spatial.d")
    p.add_argument("--values", required=True, help="comma-separated values (may be empty)")
    p.add_argument("--out", help="parent output directory")
    p.add_argument("--workers", type=int, default=None, help="parallel runs for dynamics sweeps")

    p = sub.add_parser("validate", help="check a configuration without running it")
    _source_args(p)

    sub.add_parser("list-presets", help="print the bundled presets")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-presets":
            for name in PRESET_NAMES:
                print(name)
            return 0
        cfg = _load(args)
        if args.command == "validate":
            print(f"{cfg.name}: ok")
            return 0
        if args.command == "run":
            res = run(cfg, out_dir=args.out)
            print(_summary(res))
            return 0
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        results = sweep(cfg, args.param, values, out_dir=args.out, workers=args.workers)
        for v, res in zip(values, results):
            print(f"[{args.param}={v}] " + _summary(res).replace("\n", "; "))
        if not values:
            print("empty value list: nothing to do")
        return 0
    except (ConfigError, RunError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
