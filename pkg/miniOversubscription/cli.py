"""
The "oversub" command. Subcommands:

    oversub classify series.csv [--threshold 0.72] [--compare12-threshold X] [--trim global|per-day]
    oversub generate-trace [config] [--set key=value ...] [--out trace.csv]
    oversub simulate [config] [--set key=value ...] [--sweep key=v1,v2 ...] [--jobs N] [--output-dir DIR]
    oversub budget [draws.csv | --worked-example] [--policy minimal_uf_impact] [--emax-uf X ...] [--out budget.json]
    oversub report (--draws draws.csv [--allocation-log trace.csv] | --metrics a.json b.json ...) [--out table.csv]
    oversub chassis-experiment [--placement balanced|imbalanced] [--mode per-vm|full-server] [--no-capping] [--compare]

A missing config means the bundled fleet.config. Exit codes: 0 success, 2 malformed input or configuration, 3 a
chassis budget below the idle floor, 4 no feasible budget.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException
from miniOversubscription.Core.Criticality import (
    classify,
    series_from_csv,
    DEFAULT_THRESHOLD,
    TRIM_GLOBAL,
    TRIM_PER_DAY)
from miniOversubscription.Core.Capping import CappingMode
from miniOversubscription.Core.CoreExceptions.CappingExceptions import InfeasibleBudget
from miniOversubscription.Computations.ComputationExceptions.OversubscriptionExceptions import NoFeasibleBudget
from miniOversubscription.Computations.Oversubscription import (
    HistoricalDraws,
    HistoryEstimates,
    ChassisComposition,
    OversubPolicy,
    PRESETS,
    compare_provisioning,
    estimate_history,
    find_min_budget,
    worked_example_draws)
from miniOversubscription.Computations.TraceGenerator import Trace, generate_trace
from miniOversubscription.Computations.Simulation import run
from miniOversubscription.Computations.ChassisExperiment import (
    ChassisExperimentConfig,
    PLACEMENTS,
    compare_placements,
    run_experiment)
from miniOversubscription.Utilities.Config import RunConfig, load, load_bundled, parse_assignment
from miniOversubscription.Utilities.File import File
from miniOversubscription.Utilities.UtilityExceptions import ConfigurationError, MalformedInput


logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s'

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NO_BUDGET = 4

# fleet averages, used when no allocation log is given
DEFAULT_ESTIMATES = HistoryEstimates(beta=0.4, util_uf=0.65, util_nuf=0.44)

SUMMARY_METRICS = ('deployment_requests', 'deployment_failure_rate', 'avg_empty_server_ratio',
                   'stddev_avg_chassis_score', 'stddev_avg_server_score', 'avg_chassis_draw_w', 'max_chassis_draw_w',
                   'capping_events', 'rapl_events', 'longest_over_budget_s')


def exit_code(error: BaseException) -> int:
    if isinstance(error, InfeasibleBudget):
        return EXIT_INFEASIBLE
    if isinstance(error, NoFeasibleBudget):
        return EXIT_NO_BUDGET
    return EXIT_INPUT


# ========================================================================================================= CLASSIFY
def cmd_classify(args: argparse.Namespace) -> int:
    series = series_from_csv(args.input)
    label, scores = classify(series, args.threshold, args.compare12_threshold, args.trim)
    if scores.too_short:
        print(f'{label.value} (series too short)')
    else:
        print(f'{label.value} compare8={scores.compare8:.4f} compare12={scores.compare12:.4f}')
    return EXIT_OK


# ============================================================================================================ TRACE
def _config(args: argparse.Namespace) -> RunConfig:
    config = load(args.config) if args.config else load_bundled()
    overrides = dict(parse_assignment(text) for text in args.set or ())
    return config.with_overrides(overrides) if overrides else config


def cmd_generate_trace(args: argparse.Namespace) -> int:
    config = _config(args)
    trace = generate_trace(config.trace)
    trace.write_csv(args.out, args.output_dir)
    logger.info('%d VMs written to %s', len(trace), args.out)
    return EXIT_OK


# ========================================================================================================= SIMULATE
def parse_sweep(texts: Sequence[str]) -> List[Dict[str, Any]]:
    """['a=1,2', 'b=x,y'] -> the four combinations, in order."""

    axes = list()
    for text in texts:
        key, raw = parse_assignment(text)
        values = raw if isinstance(raw, list) else str(raw).split(',')
        parsed = list()
        for value in values:
            try:
                parsed.append(json.loads(value) if isinstance(value, str) else value)
            except json.JSONDecodeError:
                parsed.append(value)
        axes.append([(key, v) for v in parsed])
    return [dict(combination) for combination in itertools.product(*axes)]


def _sweep_run(data: dict, directory: str) -> Tuple[int, Any]:
    """One run of a sweep, in a worker process. Errors come back as (exit code, message)."""
    try:
        result = run(RunConfig.from_dict(data))
        result.write(directory)
        return EXIT_OK, result.metrics.as_dict()
    except MiniOversubscriptionException as e:
        return exit_code(e), str(e)


def _summary(metrics: dict) -> pd.Series:
    return pd.Series({key: metrics[key] for key in SUMMARY_METRICS}, name='value')


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config(args)

    if not args.sweep:
        result = run(config)
        result.write(args.output_dir)
        print(_summary(result.metrics.as_dict()).to_string())
        return EXIT_OK

    points = parse_sweep(args.sweep)
    configs = [config.with_overrides(point) for point in points]
    root = Path(args.output_dir or config.output.directory)
    directories = [str(root / f'run{i:03d}') for i in range(len(configs))]

    if args.jobs == 1:
        outcomes = [_sweep_run(c.as_dict(), d) for c, d in zip(configs, directories)]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_sweep_run, [c.as_dict() for c in configs], directories))

    rows = list()
    for point, directory, (code, payload) in zip(points, directories, outcomes):
        if code != EXIT_OK:
            print(payload, file=sys.stderr)
            return code
        rows.append({**point, 'directory': directory, **{key: payload[key] for key in SUMMARY_METRICS}})

    table = pd.DataFrame(rows)
    out = File()
    out.bind_output('sweep.csv', str(root))
    out.write_frame(table)
    print(table.to_string(index=False))
    return EXIT_OK


# =========================================================================================================== BUDGET
def _policy(args: argparse.Namespace) -> OversubPolicy:
    overrides = {key: getattr(args, key) for key in ('emax_uf', 'emax_nuf', 'fmin_uf', 'fmin_nuf', 'buffer')
                 if getattr(args, key) is not None}
    if args.full_server:
        overrides['full_server'] = True
    return OversubPolicy.preset(args.policy, **overrides)


def _estimates(args: argparse.Namespace) -> HistoryEstimates:
    if args.allocation_log:
        log = Trace.read_csv(args.allocation_log).to_frame()
        return estimate_history(log, external_as_user_facing=args.external_as_user_facing)
    return DEFAULT_ESTIMATES


def _draws(args: argparse.Namespace) -> HistoricalDraws:
    if args.worked_example:
        return worked_example_draws()
    if not args.draws:
        raise ConfigurationError('<command line>', 'give a draws file or --worked-example.', variables={})
    return HistoricalDraws.read_csv(args.draws)


def cmd_budget(args: argparse.Namespace) -> int:
    composition = ChassisComposition(args.blades, args.allocated_cores)
    result = find_min_budget(_draws(args), _policy(args), _estimates(args), composition,
                             provisioned_w=args.provisioned, delta_w=args.delta)
    if args.out:
        result.write_json(args.out, args.output_dir)
    else:
        print(json.dumps(result.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


# =========================================================================================================== REPORT
def cmd_report(args: argparse.Namespace) -> int:
    if args.metrics:
        rows = list()
        for path in args.metrics:
            source = File()
            source.bind_input(path)
            try:
                metrics = source.read_json()
            except json.JSONDecodeError as e:
                raise MalformedInput(path, [f'line {e.lineno}: {e.msg}'], variables={'path': path})
            rows.append({'file': path, **{k: v for k, v in metrics.items() if not isinstance(v, dict)}})
        table = pd.DataFrame(rows)
    else:
        draws = HistoricalDraws.read_csv(args.draws)
        internal = None
        if args.allocation_log:
            log = Trace.read_csv(args.allocation_log).to_frame()
            estimates = estimate_history(log)
            internal = estimate_history(log, external_as_user_facing=True)
        else:
            estimates = DEFAULT_ESTIMATES
        composition = ChassisComposition(args.blades, args.allocated_cores)
        table = compare_provisioning(draws, estimates, composition, args.provisioned, internal_estimates=internal)

    if args.out:
        out = File()
        out.bind_output(args.out, args.output_dir)
        out.write_frame(table)
    print(table.to_string(index=False))
    return EXIT_OK


# =============================================================================================== CHASSIS EXPERIMENT
def cmd_chassis_experiment(args: argparse.Namespace) -> int:
    overrides = {'placement': args.placement, 'mode': args.mode, 'capping': not args.no_capping}
    if args.duration is not None:
        overrides['duration_s'] = args.duration
    config = ChassisExperimentConfig.bundled(**overrides)

    if args.compare:
        table = compare_placements(config)
        if args.out:
            out = File()
            out.bind_output(args.out, args.output_dir)
            out.write_frame(table)
        print(table.to_string(index=False))
        return EXIT_OK

    result = run_experiment(config)
    if args.out:
        result.write_csv(args.out, args.output_dir)
    print(pd.Series(result.summary(), name='value').to_string())
    return EXIT_OK


# ============================================================================================================ PARSER
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='oversub', description='Criticality-aware power capping and '
                                                                 'oversubscription.')
    parser.add_argument('-v', '--verbose', action='store_true', help='log at DEBUG level')
    parser.add_argument('--log-file', help='also write the log to this file')
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('classify', help='label a utilization series UserFacing or NonUserFacing')
    p.add_argument('input', help='CSV with the columns timestamp,utilization at a 30-minute cadence')
    p.add_argument('--threshold', type=float, default=DEFAULT_THRESHOLD)
    p.add_argument('--compare12-threshold', type=float, default=None)
    p.add_argument('--trim', choices=(TRIM_GLOBAL, TRIM_PER_DAY), default=TRIM_GLOBAL)
    p.set_defaults(handler=cmd_classify)

    for name, handler, text in (('generate-trace', cmd_generate_trace, 'write a VM arrival trace as CSV'),
                                ('simulate', cmd_simulate, 'run the cluster simulation')):
        p = commands.add_parser(name, help=text)
        p.add_argument('config', nargs='?', help='configuration file (default: the bundled fleet.config)')
        p.add_argument('--set', action='append', metavar='KEY=VALUE', help='override a configuration value')
        p.add_argument('--output-dir', default=None)
        p.set_defaults(handler=handler)
        if name == 'generate-trace':
            p.add_argument('--out', default='trace.csv')
        else:
            p.add_argument('--sweep', action='append', metavar='KEY=V1,V2', help='run every combination')
            p.add_argument('--jobs', type=int, default=1)

    p = commands.add_parser('budget', help='find the lowest chassis budget a policy accepts')
    p.add_argument('draws', nargs='?', help='CSV with the columns chassis_id,timestamp,watts')
    p.add_argument('--worked-example', action='store_true', help='use the bundled 10,000-reading example')
    p.add_argument('--policy', choices=sorted(PRESETS), default='minimal_uf_impact')
    for flag in ('emax-uf', 'emax-nuf', 'fmin-uf', 'fmin-nuf', 'buffer'):
        p.add_argument(f'--{flag}', type=float, default=None)
    p.add_argument('--full-server', action='store_true')
    p.add_argument('--out', default=None, help='JSON file (default: standard output)')
    p.set_defaults(handler=cmd_budget)

    p = commands.add_parser('report', help='provisioning comparison or metrics table')
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--draws', help='draws CSV to compare the provisioning approaches on')
    source.add_argument('--metrics', nargs='+', help='metrics JSON files to tabulate')
    p.add_argument('--out', default=None, help='CSV file')
    p.set_defaults(handler=cmd_report)

    for p in (commands.choices['budget'], commands.choices['report']):
        p.add_argument('--allocation-log', default=None, help='trace CSV to estimate beta and utilizations from')
        p.add_argument('--external-as-user-facing', action='store_true')
        p.add_argument('--provisioned', type=float, default=None)
        p.add_argument('--delta', type=float, default=10.0)
        p.add_argument('--blades', type=int, default=ChassisComposition().blades)
        p.add_argument('--allocated-cores', type=float, default=ChassisComposition().allocated_cores)
        p.add_argument('--output-dir', default=None)

    p = commands.add_parser('chassis-experiment', help='one chassis under a tight budget')
    p.add_argument('--placement', choices=PLACEMENTS, default='balanced')
    p.add_argument('--mode', choices=[m.value for m in CappingMode], default=CappingMode.PER_VM.value)
    p.add_argument('--no-capping', action='store_true')
    p.add_argument('--duration', type=float, default=None, help='seconds')
    p.add_argument('--compare', action='store_true', help='every placement and capping mode')
    p.add_argument('--out', default=None, help='CSV file')
    p.add_argument('--output-dir', default=None)
    p.set_defaults(handler=cmd_chassis_experiment)

    return parser


def configure_logging(verbose: bool, log_file: Optional[str]) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format=LOG_FORMAT, handlers=handlers,
                        force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.log_file)
    try:
        return args.handler(args)
    except (MiniOversubscriptionException, OSError) as e:
        print(str(e), file=sys.stderr)
        return exit_code(e)


def cli():
    sys.exit(main())
