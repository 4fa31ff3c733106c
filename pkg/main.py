#!/usr/bin/env python3
"""
Command-line entry point for the multi-camera planner.

    python main.py run scenarios/narrow_gap.json --out runs/narrow_gap
    python main.py plan scenarios/two_uav.json --out plan.json
    python main.py bench scenarios/bench_default.json --out bench.csv
    python main.py init --out scenario.json
"""

import sys
import json
import argparse
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from benchmark import benchmark, write_rows
from config import settings
from errors import PlannerError
from harness import build_world, forecast_window, plan_cycle, run_scenario, write_report
from scenario import ScenarioFile, dump_document, load_scenario, load_sweep

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Sections with nothing to default
_NO_DEFAULTS = ("actor", "uavs")


def _with_seed(document: ScenarioFile, seed: Optional[int]) -> ScenarioFile:
    if seed is None:
        return document
    return document.model_copy(update={"run": document.run.model_copy(update={"seed": seed})})


def cmd_run(scenario_path: str, out_dir: Optional[str] = None, seed: Optional[int] = None,
            threads: Optional[int] = None, progress: bool = True) -> int:
    document = _with_seed(load_scenario(scenario_path), seed)
    out = out_dir or str(Path(settings.output_dir) / Path(scenario_path).stem)
    report = run_scenario(document.to_scenario(), max_threads=threads, progress=progress)
    write_report(report, out)
    print(f"Run report written to {out}")
    if not report.safety.passed:
        logger.warning(f"Safety audit failed: {report.safety.to_dict()}")
    return 0


def cmd_plan(scenario_path: str, out_path: Optional[str] = None, seed: Optional[int] = None) -> int:
    document = _with_seed(load_scenario(scenario_path), seed)
    scenario = document.to_scenario()
    world = build_world(scenario)
    rng = np.random.default_rng(scenario.seed)
    window = forecast_window(scenario, scenario.actor.start_time, rng)
    positions = {uid: pose.position for uid, pose in zip(scenario.uav_ids, scenario.uav_starts)}
    try:
        plan, model = plan_cycle(scenario, world, window, positions)
    except PlannerError as e:
        raise e.with_context(cycle=0)

    out = Path(out_path or Path(settings.output_dir) / f"{Path(scenario_path).stem}_plan.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        json.dump(plan.to_dict(model), f, indent=2)
    print(f"Plan for {len(plan.paths)} UAVs (total cost {plan.total_cost:.6g}) written to {out}")
    return 0


def cmd_bench(sweep_path: str, out_csv: Optional[str] = None, seed: Optional[int] = None,
              progress: bool = True) -> int:
    document = load_sweep(sweep_path)
    if seed is not None:
        document = document.model_copy(update={"seed": seed})
    rows = benchmark(document.to_sweep(), progress=progress)
    out = write_rows(rows, out_csv or str(Path(settings.output_dir) / "bench.csv"))

    print(f"{'state_space':<14}{'n':>3}{'T':>4}{'computed':>10}{'mean_ms':>12}{'std_ms':>10}{'min_ms':>10}{'MB':>10}")
    for row in rows:
        if row.mean_ms is not None:
            timing = f"{row.mean_ms:>12.3f}{row.std_ms:>10.3f}{row.min_ms:>10.3f}"
        else:
            timing = f"{'-':>12}{'-':>10}{'-':>10}"
        print(f"{row.state_space:<14}{row.n_uavs:>3}{row.horizon_steps:>4}{row.computed_states:>10}"
              f"{timing}{row.table_bytes / 1024 ** 2:>10.1f}")
    print(f"Benchmark table written to {out}")
    return 0


def cmd_init(out_path: Optional[str] = None) -> int:
    """Write the reference scenario with every default spelled out"""
    document = dump_document(ScenarioFile.reference())
    text = json.dumps(document, indent=2)
    if out_path is None:
        print(text)
        return 0
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n")
    print(f"Reference scenario written to {out}")
    return 0


def _defaults_epilog() -> str:
    reference = dump_document(ScenarioFile.reference())
    lines = ["scenario defaults (SI units: meters, seconds, radians; `<key>_deg` accepts degrees):"]
    for section, values in reference.items():
        if section in _NO_DEFAULTS:
            continue
        flat = ", ".join(f"{k}={json.dumps(v)}" for k, v in values.items())
        lines.append(f"  {section}: {flat}")
    lines.append("exit codes: 0 success, 2 configuration error, 3 numeric error, 4 size-limit error")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory (run) or file (plan, bench, init)")
    common.add_argument("--seed", type=int, default=None, help="override the document's random seed")
    common.add_argument("--threads", type=int, default=None,
                        help=f"cap for concurrent smoothers (default: MAX_THREADS={settings.max_threads})")
    common.add_argument("--quiet", action="store_true", help="log warnings only, no progress bars")

    parser = argparse.ArgumentParser(
        description="Multi-camera aerial cinematography planner",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="simulate a scenario and write the run report")
    run.add_argument("scenario", help="scenario JSON file")
    plan = sub.add_parser("plan", parents=[common], help="plan once at t=0 and dump the plan with cost breakdowns")
    plan.add_argument("scenario", help="scenario JSON file")
    bench = sub.add_parser("bench", parents=[common], help="time the greedy planner over a sweep")
    bench.add_argument("sweep", help="benchmark sweep JSON file")
    sub.add_parser("init", parents=[common], help="emit the reference scenario with all defaults")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else settings.log_level, format=LOG_FORMAT)
    progress = settings.show_progress and not args.quiet
    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be >= 1")
        return 2

    try:
        if args.command == "run":
            return cmd_run(args.scenario, args.out, args.seed, args.threads, progress)
        if args.command == "plan":
            return cmd_plan(args.scenario, args.out, args.seed)
        if args.command == "bench":
            return cmd_bench(args.sweep, args.out, args.seed, progress)
        return cmd_init(args.out)
    except PlannerError as e:
        where = f"module={e.module or 'unknown'}" + (f" cycle={e.cycle}" if e.cycle is not None else "")
        logger.error(f"{type(e).__name__} ({where}): {e.message}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
