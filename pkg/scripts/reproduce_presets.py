"""Run bundled presets and write their CSVs under one output directory."""

import argparse
from pathlib import Path

from pbgfluor.config import PRESET_NAMES, load_preset
from pbgfluor.runner import run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("presets", nargs="*", default=list(PRESET_NAMES))
    ap.add_argument("--out", default="out/presets")
    args = ap.parse_args()
    for name in args.presets:
        res = run(load_preset(name), out_dir=Path(args.out) / name)
        flags = {k: ";".join(v) or "ok" for k, v in res.flags.items()}
        print(f"{name:18s} {res.wall_time:7.1f} s  {flags}")


if __name__ == "__main__":
    main()
