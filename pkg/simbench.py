'''
Command line driver of the workbench: run, sweep, oracle-check, report and overhead verbs.
'''
import argparse
import json
import sys
from pathlib import Path
from typing import List

import harness
from configuration import VERSION, ConfigurationError, ExperimentConfig, load_config
from fl_sim import SimulationError
from fs_access import atomic_write_text, ensure_directory
from report import MetricsReport, emit_report, load_reports
from uni_chars import *


def separator() -> None:
    print()
    print("============================================")
    print()


def header(text: str) -> None:
    print(text)


def _load(arguments: argparse.Namespace) -> ExperimentConfig:
    config = load_config(arguments.config, verbose=True)
    if getattr(arguments, 'seed', None) is not None:
        config.master_seed = arguments.seed
    if getattr(arguments, 'out', None) is not None:
        config.out_dir = arguments.out
    config.post_validate()
    return config


def _write(reports: List[MetricsReport], out_dir: str, stem: str) -> None:
    directory = ensure_directory(out_dir)
    for fmt in ('json', 'csv'):
        path = emit_report(reports, fmt, directory / f"{stem}.{fmt}")
        print(f"{REPORT} Report written to {path}")


def _print_failures(failures: List[dict]) -> None:
    print(json.dumps(failures, indent=2, sort_keys=True))


def command_run(arguments: argparse.Namespace) -> int:
    config = _load(arguments)
    header(f"{LAUNCH} Running {config}")
    separator()
    try:
        report = harness.run(config, verbose=True)
    except SimulationError as e:
        _print_failures([{'cell': 0, 'axis': None, 'value': None, 'message': str(e)}])
        return 1
    separator()
    print(f"{PERCENT} ER={report.er:.4f} SR={report.sr:.2f}")
    print(f"{TIME} TC={report.tc_seconds:.6f}s")
    _write([report], config.out_dir, "report")
    return 0


def command_sweep(arguments: argparse.Namespace) -> int:
    config = _load(arguments)
    axis, values = harness.parse_axis(arguments.axis)
    header(f"{SWEEP} Sweep of {axis} over {values}")
    separator()
    result = harness.sweep(config, axis, values, workers=arguments.workers, verbose=True)
    separator()
    if result.completed:
        _write(result.completed, config.out_dir, f"sweep_{axis.replace('.', '_')}")
    if not result.ok:
        print(f"{ERROR} {len(result.failures)} of {len(values)} cells failed")
        _print_failures([f.to_dict() for f in result.failures])
        return 1
    print(f"{SUCCESS} All {len(values)} cells completed")
    return 0


def command_oracle_check(arguments: argparse.Namespace) -> int:
    header(f"{ORACLE} Oracle self-check")
    separator()
    report = harness.oracle_check(instances=arguments.instances, points=arguments.points, seed=arguments.seed,
                                  verbose=True)
    separator()
    if arguments.out is not None:
        path = Path(arguments.out)
        ensure_directory(path.parent)
        atomic_write_text(path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        print(f"{REPORT} Oracle report written to {path}")
    failure = report.first_failure
    if failure is not None:
        print(f"{ERROR} Oracle {failure.name} failed, replay input:")
        print(json.dumps(failure.replay, sort_keys=True))
        return 1
    print(f"{SUCCESS} All oracles passed")
    return 0


def command_report(arguments: argparse.Namespace) -> int:
    reports: List[MetricsReport] = []
    for path in arguments.input:
        reports.extend(load_reports(path))
    target = emit_report(reports, arguments.format, arguments.out)
    print(f"{REPORT} {len(reports)} reports written to {target}")
    return 0


def command_overhead(arguments: argparse.Namespace) -> int:
    config = _load(arguments)
    comparison = harness.compare_overhead(config, fraction=arguments.fraction, verbose=True)
    print(f"{PERCENT} SPP screening costs {100.0 * comparison.ratio:.2f}% of the ERR evaluation")
    return 0


COMMANDS = {
    'run': command_run,
    'sweep': command_sweep,
    'oracle-check': command_oracle_check,
    'report': command_report,
    'overhead': command_overhead,
}


def main(arguments: argparse.Namespace) -> int:
    '''
    Dispatches the parsed verb.

    :param arguments: Arguments passed to the CLI, parsed by `argparse`.
    :return: Process exit status, 0 iff every requested cell completed.
    '''
    try:
        return COMMANDS[arguments.command](arguments)
    except (ConfigurationError, FileNotFoundError) as e:
        print(e)
        _print_failures([{'cell': None, 'axis': getattr(e, 'field', None), 'value': None, 'message': str(e)}])
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=f'simbench {VERSION} - similarity attack workbench')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='Run one experiment')
    run.add_argument('--config', type=str, required=True, metavar="PATH", help='JSON experiment document')
    run.add_argument('--seed', type=int, default=None, metavar="N", help='Override the master seed')
    run.add_argument('--out', type=str, default=None, metavar="DIR", help='Override the output directory')

    sweep = commands.add_parser('sweep', help='Vary one configuration axis')
    sweep.add_argument('--config', type=str, required=True, metavar="PATH", help='JSON experiment document')
    sweep.add_argument('--axis', type=str, required=True, metavar="NAME=V1,V2",
                       help='Dotted field and its values, e.g. m=1,2,5 or attack.groups=2,J/2,J')
    sweep.add_argument('--workers', type=int, default=1, metavar="N", help='Worker processes, one cell each')
    sweep.add_argument('--seed', type=int, default=None, metavar="N", help='Override the master seed')
    sweep.add_argument('--out', type=str, default=None, metavar="DIR", help='Override the output directory')

    oracle = commands.add_parser('oracle-check', help='Verify the closed forms against brute force')
    oracle.add_argument('--instances', type=int, default=100, metavar="N", help='Random instances per dimension')
    oracle.add_argument('--points', type=int, default=100_000, metavar="N", help='Grid points of the brute force')
    oracle.add_argument('--seed', type=int, default=0, metavar="N", help='Seed of the random instances')
    oracle.add_argument('--out', type=str, default=None, metavar="PATH", help='Write the oracle report as JSON')

    report = commands.add_parser('report', help='Re-emit JSON reports as CSV or JSON')
    report.add_argument('--format', type=str, choices=['csv', 'json'], required=True)
    report.add_argument('--input', type=str, nargs='+', required=True, metavar="PATH", help='JSON report files')
    report.add_argument('--out', type=str, required=True, metavar="PATH", help='Destination file')

    overhead = commands.add_parser('overhead', help='Time SPP screening against an ERR evaluation')
    overhead.add_argument('--config', type=str, required=True, metavar="PATH", help='JSON experiment document')
    overhead.add_argument('--fraction', type=float, default=0.5, help='SPP subset fraction')

    return parser


if __name__ == '__main__':
    sys.exit(main(build_parser().parse_args()))
