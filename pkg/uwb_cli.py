#!/usr/bin/env python3
"""
Command-line entry point of the UWB ranging toolkit.

Subcommands:
  simulate    scene -> records.csv / twr_records.csv
  correct     records -> corrected.csv / twr_corrected.csv
  solve       corrected -> estimates.csv
  experiment  experiment YAML -> full output tree + report.json
  report      estimates.csv -> statistics

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 data error, 4 geometry error.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from config_loader import get_config_value, load_scene
from log_setup import setup_logging
from uwb_errors import ErrorFormatter, UwbError, exit_code_for
from exchange_simulator import simulate_session, simulate_twr_session
from corrections import SceneCalibration, correct_session
from position_solver import SolveMode, SolverConfig, build_measurement_set, solve_session
from experiment import (
    ExperimentConfig,
    ExperimentReport,
    parse_modes,
    run_experiment,
    summarize_estimates,
    with_overrides,
)
import record_io

logger = logging.getLogger('UwbCli')

FILES = {
    SolveMode.FUSED: ('records.csv', 'corrected.csv'),
    SolveMode.TOA_ONLY: ('twr_records.csv', 'twr_corrected.csv'),
}


def print_report(report: ExperimentReport) -> None:
    """Print a human readable summary of a report."""
    print("\n" + "=" * 70)
    print(f"📡  UWB POSITIONING REPORT - {report.scene_name or 'estimates'}")
    print("=" * 70)
    print(f"Rounds: {report.n_rounds}    Seed: {report.seed}")
    if report.truth is not None:
        print(f"Truth:  ({report.truth[0]:.4f}, {report.truth[1]:.4f}) m")
    for name, stats in report.modes.items():
        print(f"\n[{name}] used {stats.used_rounds}, excluded {stats.excluded_rounds}")
        if stats.mean is None:
            print("  mean    n/a")
        else:
            print(f"  mean    ({stats.mean[0]:.6f}, {stats.mean[1]:.6f}) m")
        if stats.stddev is None:
            print("  stddev  n/a (fewer than 2 usable fixes)")
        else:
            print(f"  stddev  ({stats.stddev[0]:.6f}, {stats.stddev[1]:.6f}) m")
            print(f"  cov     [[{stats.covariance[0][0]:.3e}, {stats.covariance[0][1]:.3e}],"
                  f" [{stats.covariance[1][0]:.3e}, {stats.covariance[1][1]:.3e}]] m²")
    if report.mode_difference is not None:
        print(f"\nMode difference: ({report.mode_difference[0]:.6f}, {report.mode_difference[1]:.6f}) m")
    if report.max_mode_distance is not None:
        print(f"Max per-round mode distance: {report.max_mode_distance:.3e} m")
    print("=" * 70 + "\n")


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    modes = parse_modes(args.mode)
    if SolveMode.FUSED in modes:
        records = simulate_session(scene, args.rounds, args.seed)
        record_io.write_records(records, os.path.join(args.out, FILES[SolveMode.FUSED][0]))
    if SolveMode.TOA_ONLY in modes:
        records = simulate_twr_session(scene, args.rounds, args.seed)
        record_io.write_records(records, os.path.join(args.out, FILES[SolveMode.TOA_ONLY][0]))
    print(f"✅ Simulated {args.rounds} rounds of '{scene.name}' into {args.out}")
    return 0


def cmd_correct(args) -> int:
    scene = load_scene(args.scene)
    calibration = SceneCalibration.from_scene(scene)
    for mode in parse_modes(args.mode):
        records_name, corrected_name = FILES[mode]
        source = args.input if args.input else os.path.join(args.out, records_name)
        corrected = correct_session(record_io.read_records(source), calibration)
        record_io.write_corrected(corrected, os.path.join(args.out, corrected_name), args.diagnostics)
        print(f"✅ Corrected {len(corrected)} records from {source}")
    return 0


def cmd_solve(args) -> int:
    scene = load_scene(args.scene)
    estimates = []
    config = SolverConfig()
    for mode in parse_modes(args.mode):
        source = args.input if args.input else os.path.join(args.out, FILES[mode][1])
        corrected = record_io.read_corrected(source)
        if mode is SolveMode.TOA_ONLY:
            sweeps = {}
            for m in corrected:
                sweeps.setdefault(m.round_idx, []).append(m)
            sets = [build_measurement_set(None, scene, mode, twr_sweep=sweeps[k]) for k in sorted(sweeps)]
        else:
            sets = [build_measurement_set(m, scene, mode) for m in corrected]
        estimates.extend(solve_session(sets, config))
    estimates.sort(key=lambda e: (e.round_idx, e.mode is SolveMode.FUSED))
    record_io.write_estimates(estimates, os.path.join(args.out, 'estimates.csv'))
    print(f"✅ Solved {len(estimates)} positions into {os.path.join(args.out, 'estimates.csv')}")
    return 0


def cmd_experiment(args) -> int:
    config = with_overrides(ExperimentConfig.from_file(args.config),
                            seed=args.seed, n_rounds=args.rounds, out_dir=args.out,
                            modes=parse_modes(args.mode) if args.mode else None,
                            diagnostics=True if args.diagnostics else None)
    report = run_experiment(config)
    print_report(report)
    return 0


def cmd_report(args) -> int:
    source = args.input if args.input else os.path.join(args.out, 'estimates.csv')
    estimates = record_io.read_estimates(source)
    truth, name, radio = None, '', None
    if args.scene:
        scene = load_scene(args.scene)
        truth, name, radio = scene.tag.xy, scene.name, scene.radio.to_dict()
    report = summarize_estimates(estimates, truth=truth, scene_name=name, radio=radio)
    if args.json:
        sys.stdout.write(report.to_json())
    else:
        print_report(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='UWB ranging toolkit: simulate, correct, solve and report')
    parser.add_argument('--log-level', default=None, help='Log level (default: LOG_LEVEL from .config)')
    sub = parser.add_subparsers(dest='command', required=True)

    default_out = get_config_value('OUT_DIR', 'output', str)
    default_seed = get_config_value('DEFAULT_SEED', 20240601, int)
    default_rounds = get_config_value('DEFAULT_ROUNDS', 1000, int)

    p = sub.add_parser('simulate', help='Simulate exchange records for a scene')
    p.add_argument('--scene', required=True, help='Scene YAML file')
    p.add_argument('--seed', type=int, default=default_seed, help=f'Session seed (default: {default_seed})')
    p.add_argument('--rounds', type=int, default=default_rounds, help=f'Number of rounds (default: {default_rounds})')
    p.add_argument('--mode', choices=['toa', 'fused', 'both'], default='both', help='Which exchanges to simulate')
    p.add_argument('--out', default=default_out, help=f'Output directory (default: {default_out})')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('correct', help='Correct exchange records')
    p.add_argument('--scene', required=True, help='Scene YAML file (curves and delays)')
    p.add_argument('--input', help='Records CSV (default: records file in --out)')
    p.add_argument('--mode', choices=['toa', 'fused', 'both'], default='fused')
    p.add_argument('--out', default=default_out, help=f'Output directory (default: {default_out})')
    p.add_argument('--diagnostics', action='store_true', help='Write diagnostic columns')
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser('solve', help='Solve positions from corrected measurements')
    p.add_argument('--scene', required=True, help='Scene YAML file (station positions)')
    p.add_argument('--input', help='Corrected CSV (default: corrected file in --out)')
    p.add_argument('--mode', choices=['toa', 'fused', 'both'], default='fused')
    p.add_argument('--out', default=default_out, help=f'Output directory (default: {default_out})')
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser('experiment', help='Run a full experiment')
    p.add_argument('--config', required=True, help='Experiment YAML file')
    p.add_argument('--seed', type=int, help='Override seed')
    p.add_argument('--rounds', type=int, help='Override number of rounds')
    p.add_argument('--mode', choices=['toa', 'fused', 'both'], help='Override modes')
    p.add_argument('--out', help='Override output directory')
    p.add_argument('--diagnostics', action='store_true', help='Write diagnostic columns')
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser('report', help='Statistics of an estimates CSV')
    p.add_argument('--input', help='Estimates CSV (default: estimates.csv in --out)')
    p.add_argument('--scene', help='Scene YAML file for ground truth')
    p.add_argument('--out', default=default_out, help=f'Directory holding estimates.csv (default: {default_out})')
    p.add_argument('--json', action='store_true', help='Print the report as JSON')
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and return the process exit code."""
    try:
        parser = build_parser()
    except UwbError as e:
        print(f"❌ {ErrorFormatter.format_user_message(e)}", file=sys.stderr)
        return exit_code_for(e)
    args = parser.parse_args(argv)
    setup_logging(level=args.log_level)
    try:
        return args.func(args)
    except UwbError as e:
        logger.error(ErrorFormatter.format_error(e))
        print(f"❌ {ErrorFormatter.format_user_message(e)}", file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        logger.exception("Unexpected error: %s", e)
        print(f"❌ Unexpected error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
