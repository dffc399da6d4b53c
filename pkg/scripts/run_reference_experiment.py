#!/usr/bin/env python3
"""Run the reference two-zone experiment (all four controllers, 24 h).

Equivalent to `empc run scenarios/reference.json`; kept as a script entry
point for quick iteration on scenario tweaks.
"""

import argparse
import sys
from pathlib import Path

from empc.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default=str(ROOT / "scenarios" / "reference.json"))
    ap.add_argument("--out-dir", default="out/reference")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    return cli_main([
        "--jobs", str(args.jobs), "--out-dir", args.out_dir, "run", args.scenario
    ])


if __name__ == "__main__":
    sys.exit(run())
