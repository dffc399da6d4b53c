"""Command-line front end: run, verify, calibrate-kappa, steady-state.

Exit codes: 0 success; 2 scenario parse/validation error; 3 infeasibility
abort during a run; 4 terminal synthesis/verification failure; 5 calibration
target not bracketed.  Logging level comes from EMPC_LOG_LEVEL.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .costs import econ_stage_cost
from .harness import SimConfig, SimulationAborted, average_cost_series, monitor_suite, simulate, write_csv
from .horizon import compute_v_max
from .scenario import BuiltScenario, Scenario, ScenarioError, reference_doc
from .terminal import SteadyStateError, TerminalSynthesisError, verify_terminal

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_INFEASIBLE = 3
EXIT_VERIFY = 4
EXIT_CALIBRATE = 5


def _setup_logging():
    level = os.environ.get("EMPC_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _run_one(built: BuiltScenario, block, out_dir: Path, feas_tol: float | None) -> dict:
    scenario = built.scenario
    cfg = block.to_config(diff=scenario.doc["solver"]["diff"])
    sim = SimConfig(x0=scenario.x0, steps=scenario.steps, controller=cfg, seed=scenario.seed)
    opts = scenario.solver_options(feas_tol)
    csv_path = out_dir / f"{block.label}.csv"
    try:
        log = simulate(built.model, built.suite, built.ingredients, sim, opts)
    except SimulationAborted as exc:
        write_csv(exc.log, csv_path)
        return {
            "label": block.label,
            "scheme": block.scheme,
            "m": block.m if block.scheme == "alg2" else (1 if block.scheme == "alg1" else None),
            "completed": False,
            "error": str(exc),
            "csv": csv_path.name,
        }
    write_csv(log, csv_path)
    report = monitor_suite(log, enabled=sim.monitors)
    return {
        "label": block.label,
        "scheme": block.scheme,
        "m": block.m if block.scheme == "alg2" else (1 if block.scheme == "alg1" else None),
        "completed": True,
        "kwh": log.energy_total(),
        "final_distance": log.distance_to(built.suite.xs),
        "avg_cost_final": float(average_cost_series(log)[-1]),
        "le_steady": built.steady_cost,
        "dt_seconds": built.model.dt,
        "monitors": report.as_dict(),
        "csv": csv_path.name,
    }


def _run_block_worker(args) -> dict:
    scenario_path, index, out_dir, feas_tol = args
    scenario = Scenario.load(scenario_path)
    built = scenario.build()
    return _run_one(built, scenario.controllers[index], Path(out_dir), feas_tol)


def _load(args) -> Scenario:
    scenario = Scenario.load(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    return scenario


def cmd_run(args) -> int:
    try:
        scenario = _load(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    out_dir = Path(args.out_dir or scenario.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                runs = list(
                    pool.map(
                        _run_block_worker,
                        [(args.scenario, i, str(out_dir), args.feas_tol)
                         for i in range(len(scenario.controllers))],
                    )
                )
        else:
            built = scenario.build()
            runs = [_run_one(built, block, out_dir, args.feas_tol) for block in scenario.controllers]
    except (SteadyStateError, TerminalSynthesisError) as exc:
        print(f"verification error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    summary = {
        "scenario": str(args.scenario),
        "runs": runs,
    }
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, allow_nan=False)
        fh.write("\n")
    for run in runs:
        if run["completed"]:
            verdicts = run["monitors"]["verdicts"]
            print(
                f"{run['label']:>10s}: {run['kwh']:8.2f} kWh, final distance "
                f"{run['final_distance']:.4f}, monitors "
                + " ".join(f"{k}={'P' if v else 'F'}" for k, v in verdicts.items())
            )
        else:
            print(f"{run['label']:>10s}: ABORTED ({run['error']})")
    print(f"summary: {summary_path}")
    if any(not run["completed"] for run in runs):
        return EXIT_INFEASIBLE
    if any(not run["monitors"]["mandatory_pass"] for run in runs):
        return 1  # never exit 0 with a failed mandatory monitor
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        scenario = _load(args)
        built = scenario.build()
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (SteadyStateError, TerminalSynthesisError) as exc:
        print(f"synthesis failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    ing = built.ingredients
    n_horizon = max(b.n_horizon for b in scenario.controllers)
    verification = verify_terminal(
        built.model, built.suite, ing, n_samples=args.samples, seed=scenario.seed + 17,
        n_horizon=n_horizon, workers=args.jobs,
    )
    v_max = compute_v_max(built.model, built.suite, ing, n_horizon, seed=scenario.seed + 29)
    print(f"steady state: xs={ing.xs.tolist()} us={np.round(ing.us, 6).tolist()}")
    print(f"terminal gain K={np.round(ing.k_gain, 6).tolist()}")
    print(f"terminal weight P={np.round(ing.p_matrix, 6).tolist()}")
    print(f"alpha={ing.alpha:.6f}")
    print(f"value-bound={v_max:.3f}")
    print(
        f"verification ({verification.n_samples} samples): margins "
        f"input={verification.margin_input:.3e} "
        f"invariance={verification.margin_invariance:.3e} "
        f"decrease={verification.margin_decrease:.3e}"
    )
    if not verification.passed:
        print(f"FAILED at worst point {verification.worst_point.tolist()}", file=sys.stderr)
        return EXIT_VERIFY
    print("PASS")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        scenario = _load(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    blocks = [b for b in scenario.controllers if b.scheme == "alg1"]
    if not blocks:
        print("scenario has no alg1 block to calibrate against", file=sys.stderr)
        return EXIT_SCENARIO
    block = blocks[0]
    target = args.target
    out_dir = Path(args.out_dir or scenario.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def total_for(kappa: float) -> float:
        scn = scenario.with_kappa(kappa)
        built = scn.build()
        cfg = block.to_config(diff=scn.doc["solver"]["diff"])
        sim = SimConfig(x0=scn.x0, steps=scn.steps, controller=cfg, seed=scn.seed)
        log = simulate(built.model, built.suite, built.ingredients, sim,
                       scn.solver_options(args.feas_tol))
        return log.energy_total()

    lo_k, hi_k = args.bracket
    try:
        lo_e = total_for(lo_k)
        hi_e = total_for(hi_k)
    except SimulationAborted as exc:
        print(f"calibration run aborted: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"bracket: E({lo_k})={lo_e:.2f} kWh, E({hi_k})={hi_e:.2f} kWh, target {target}")
    if not (min(lo_e, hi_e) - args.tol <= target <= max(lo_e, hi_e) + args.tol):
        print(
            f"target {target} kWh not bracketed by [{lo_e:.2f}, {hi_e:.2f}]; "
            "the fan coefficient cannot reach it",
            file=sys.stderr,
        )
        return EXIT_CALIBRATE
    if lo_e <= hi_e:
        k_lo, e_lo, k_hi, e_hi = lo_k, lo_e, hi_k, hi_e
    else:
        k_lo, e_lo, k_hi, e_hi = hi_k, hi_e, lo_k, lo_e
    kappa, energy = k_lo, e_lo
    for it in range(args.max_iter):
        if abs(energy - target) <= args.tol:
            break
        # false position with a bisection safeguard keeps the bracket shrinking
        if abs(e_hi - e_lo) > 1e-12:
            kappa = k_lo + (target - e_lo) * (k_hi - k_lo) / (e_hi - e_lo)
        else:
            kappa = 0.5 * (k_lo + k_hi)
        width = abs(k_hi - k_lo)
        mid = 0.5 * (k_lo + k_hi)
        if not (min(k_lo, k_hi) < kappa < max(k_lo, k_hi)) or it % 3 == 2:
            kappa = mid
        energy = total_for(kappa)
        print(f"  kappa={kappa:.6f} -> {energy:.3f} kWh")
        if energy < target:
            k_lo, e_lo = kappa, energy
        else:
            k_hi, e_hi = kappa, energy
    if abs(energy - target) > args.tol:
        print(f"bisection did not reach the target within {args.tol} kWh", file=sys.stderr)
        return EXIT_CALIBRATE
    calibrated = scenario.with_kappa(kappa)
    out_path = out_dir / "calibrated_scenario.json"
    calibrated.save(out_path)
    print(f"kappa_bar = {kappa:.6f} ({energy:.3f} kWh); wrote {out_path}")
    return EXIT_OK


def cmd_steady_state(args) -> int:
    try:
        scenario = _load(args)
        built = scenario.build()
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except SteadyStateError as exc:
        print(f"steady-state failure: {exc} (residual {exc.residual})", file=sys.stderr)
        return EXIT_VERIFY
    xs, us = built.suite.xs, built.suite.us
    le = econ_stage_cost(built.suite.econ, xs, us)
    print(f"xs = {xs.tolist()}")
    print(f"us = {np.round(us, 6).tolist()}")
    print(f"economic cost = {le:.6f} kW")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="empc",
        description="Economic MPC with non-monotonic Lyapunov constraints: "
        "simulate, verify, calibrate.",
    )
    parser.add_argument("--out-dir", default=None, help="output directory (overrides scenario)")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    parser.add_argument("--feas-tol", type=float, default=None, help="override solver feasibility tolerance")
    parser.add_argument("--jobs", type=int, default=1, help="parallel runs / verification workers")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every controller block and write CSV logs + summary")
    p_run.add_argument("scenario", help="scenario JSON path")
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="synthesize and verify terminal ingredients")
    p_ver.add_argument("scenario")
    p_ver.add_argument("--samples", type=int, default=10_000)
    p_ver.set_defaults(func=cmd_verify)

    p_cal = sub.add_parser("calibrate-kappa", help="bisect the fan coefficient to a 24 h energy target")
    p_cal.add_argument("scenario")
    p_cal.add_argument("--target", type=float, required=True, help="target kWh for the alg1 block")
    p_cal.add_argument("--tol", type=float, default=0.5, help="energy tolerance in kWh")
    p_cal.add_argument("--bracket", type=float, nargs=2, default=(0.0, 10.0))
    p_cal.add_argument("--max-iter", type=int, default=30)
    p_cal.set_defaults(func=cmd_calibrate)

    p_ss = sub.add_parser("steady-state", help="print the optimal economic steady state")
    p_ss.add_argument("scenario")
    p_ss.set_defaults(func=cmd_steady_state)
    return parser


def write_default_scenario(path) -> None:
    with open(path, "w") as fh:
        json.dump(reference_doc(), fh, indent=2)
        fh.write("\n")


def main(argv=None) -> int:
    _setup_logging()
    parser = make_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
