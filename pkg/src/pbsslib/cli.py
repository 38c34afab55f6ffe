import argparse
import json
import logging
import os
import sys
from typing import Union

from . import __version__
from .common.config import ExperimentConfig, load_config
from .core.experiment import run_point, sweep, predict, prepare_kernel, point_seed, write_csv, ROW_COLUMNS, \
    KernelStore
from .core.selftest import run_selftest
from .exceptions import ConfigurationException, SweepInterruptedException

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pbsslib', description='Perturbation based sequence selection for PAS')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='TOML configuration file')
    common.add_argument('--seed', type=int, help='Master seed, overrides the configuration')
    common.add_argument('--out-dir', help='Output directory, overrides the configuration')
    common.add_argument('--override', action='append', default=[], metavar='KEY=VALUE',
                        help='Dotted configuration override, may be repeated')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='Warnings only')

    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('kernel', parents=[common], help='Compute and cache the perturbation kernel')
    run = commands.add_parser('run', parents=[common], help='Run a single point')
    run.add_argument('--metric', default='AM', choices=('AM', 'LSAS', 'none'))
    run.add_argument('-N', '--candidates', type=int, default=1)
    run.add_argument('--power', type=float, default=0.0, help='Launch power per channel in dBm')
    run.add_argument('--repetition', type=int, default=0)
    commands.add_parser('sweep', parents=[common], help='Sweep launch power, candidates and metrics')
    commands.add_parser('predict', parents=[common], help='Predict SNR gains without SSFM')
    commands.add_parser('selftest', parents=[common], help='Run the invariant suite')
    return parser


def configure_logging(verbose: bool, quiet: bool) -> None:
    level: int = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def _load(args: argparse.Namespace) -> ExperimentConfig:
    overrides: list = list(args.override)
    if args.seed is not None:
        overrides.append(f'seed={args.seed}')
    if args.out_dir is not None:
        overrides.append(f'output.out_dir={json.dumps(args.out_dir)}')
    return load_config(args.config, overrides)


def _out_dir(config: ExperimentConfig) -> str:
    os.makedirs(config.output.out_dir, exist_ok=True)
    return config.output.out_dir


def _selftest() -> int:
    results = run_selftest()
    for result in results:
        print(f'{"PASS" if result.passed else "FAIL"}  {result.name:<26} {result.seconds:7.2f} s  {result.detail}')
    failed: int = sum(not result.passed for result in results)
    print(f'{len(results) - failed}/{len(results)} checks passed')
    return EXIT_OK if failed == 0 else EXIT_SELFTEST


def main(argv: Union[list[str], None] = None) -> int:
    """
    Entry point of the pbsslib command
    :param argv: Arguments without the program name, defaults to sys.argv[1:]
    :return: Exit code, 0 success, 1 configuration error, 2 runtime failure, 3 selftest failure
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    if args.command == 'selftest':
        return _selftest()
    try:
        config = _load(args)
    except ConfigurationException as exc:
        print(f'Configuration error: {exc}', file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == 'kernel':
            kernel = prepare_kernel(config)
            print(f'Kernel {kernel.fingerprint} ({2 * kernel.window_m + 1} x {2 * kernel.window_k + 1}) ready')
        elif args.command == 'run':
            seed: int = point_seed(config, args.repetition)
            row = run_point(config, args.metric, args.candidates, args.power, seed,
                            kernels=KernelStore(config.cache_dir), repetition=args.repetition)
            write_csv(os.path.join(_out_dir(config), 'run.csv'), ROW_COLUMNS, [row])
            print(json.dumps(row, indent=2))
        elif args.command == 'sweep':
            report = sweep(config, out_dir=_out_dir(config))
            print(f'{len(report.rows)} points done, {len(report.failures)} failed, results in {config.output.out_dir}')
            if report.failures:
                return EXIT_RUNTIME
        elif args.command == 'predict':
            rows = predict(config, out_dir=_out_dir(config))
            for row in rows:
                print(f'{row["metric"]:>5} N={row["N"]:<3} predicted gain {row["predicted_gain_db"]:.3f} dB')
    except ConfigurationException as exc:
        print(f'Configuration error: {exc}', file=sys.stderr)
        return EXIT_CONFIG
    except SweepInterruptedException as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        log.debug('Command %s failed', args.command, exc_info=True)
        print(f'{type(exc).__name__}: {exc}', file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK
