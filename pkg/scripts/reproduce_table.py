#!/usr/bin/env python3
"""Reproduce the 24 h energy comparison end to end.

Calibrates the fan coefficient so the per-step-decrease scheme's day totals
240.3 kWh, runs all four controllers at the calibrated coefficient, and prints
the energy table plus monitor verdicts.  Writes CSV logs and summary.json to
--out-dir (default out/table).
"""

import argparse
import json
import sys
from pathlib import Path

from empc.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default=str(ROOT / "scenarios" / "reference.json"))
    ap.add_argument("--out-dir", default="out/table")
    ap.add_argument("--target", type=float, default=240.3)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rc = cli_main([
        "--out-dir", str(out),
        "calibrate-kappa", args.scenario, "--target", str(args.target),
    ])
    if rc != 0:
        return rc
    rc = cli_main([
        "--jobs", str(args.jobs), "--out-dir", str(out),
        "run", str(out / "calibrated_scenario.json"),
    ])
    summary = json.loads((out / "summary.json").read_text())
    print(f"\n{'scheme':>10s} {'kWh':>8s} {'final dist':>11s} {'avg cost':>9s}")
    for entry in summary["runs"]:
        print(
            f"{entry['label']:>10s} {entry['kwh']:8.2f} {entry['final_distance']:11.4f} "
            f"{entry['avg_cost_final']:9.3f}"
        )
    return rc


if __name__ == "__main__":
    sys.exit(run())
