"""
Command-line entry point.

    fedawe-sim run     --config PATH [--seed N[,N...]] [--out DIR] [--format csv|json]
    fedawe-sim sweep   --config PATH ...
    fedawe-sim preset  --preset NAME [--quick] [--strict] ...
    fedawe-sim verify  [--suite NAME ...] [--quick]

Exit codes: 0 success, 1 configuration or input error, 2 numerical
divergence, 3 failed verification (or failed preset checks with --strict).
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .config import config_to_dict, load_config
from .errors import ConfigError, InvalidInputError, NumericalDivergenceError, SimulationError, UsageError
from .logs import setup_logging, write_event
from .presets import PRESETS, run_preset
from .results import RunManifest, write_manifest, write_rows, write_table
from .runner import resolve_seeds, run_experiment
from .verify import SUITES, run_verify

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_VERIFY_FAILED = 3


def parse_seeds(text: str) -> List[int]:
    try:
        seeds = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be non-negative integers")
    return seeds


class ArgumentParser(argparse.ArgumentParser):
    """Raises UsageError on bad flags; exit status 2 is reserved for divergence"""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(prog='fedawe-sim', description=__doc__.split('\n\n')[0].strip())
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--log-dir', type=Path, default=None, help="Also write fedawe_sim.log here")

    common = ArgumentParser(add_help=False)
    common.add_argument('--seed', type=parse_seeds, default=None, help="Seed or comma-separated seeds")
    common.add_argument('--out', type=Path, default=None, help="Output directory")
    common.add_argument('--workers', type=int, default=None, help="Worker pool size (default: physical cores)")
    common.add_argument('--processes', action='store_true', help="Use a process pool instead of threads")
    common.add_argument('--format', choices=['csv', 'json'], default='csv')

    sub = parser.add_subparsers(dest='command', required=True)
    run = sub.add_parser('run', parents=[common], help="Run a single config")
    run.add_argument('--config', type=Path, required=True)

    sweep = sub.add_parser('sweep', parents=[common], help="Run the config's sweep grid")
    sweep.add_argument('--config', type=Path, required=True)

    preset = sub.add_parser('preset', parents=[common], help="Run a named preset")
    preset.add_argument('--preset', required=True, choices=sorted(PRESETS))
    preset.add_argument('--quick', action='store_true', help="Reduced sizes")
    preset.add_argument('--strict', action='store_true', help="Exit 3 when a preset check fails")

    verify = sub.add_parser('verify', help="Run the invariant suites")
    verify.add_argument('--seed', type=parse_seeds, default=None)
    verify.add_argument('--suite', action='append', choices=list(SUITES), default=None)
    verify.add_argument('--quick', action='store_true')
    return parser


def _finish(out: Path, name: str, command: str, seeds: Sequence[int], config: dict, outputs: List[Path]) -> None:
    manifest = RunManifest.create(name, command, seeds, config, outputs=[p.name for p in outputs])
    write_manifest(manifest, out / 'manifest.json')
    written = ', '.join(p.name for p in outputs)
    write_event(out / 'Logs', 'runs', f"{command} '{name}' seeds={list(seeds)} -> {written}")


def _run_preset(name: str, args, seeds: Optional[Sequence[int]], options: Optional[dict] = None) -> int:
    quick = getattr(args, 'quick', False)
    table = run_preset(name, seeds=seeds, workers=args.workers, quick=quick, processes=args.processes,
                       **(options or {}))
    out = args.out or Path('results') / name
    path = write_table(table, out / f"{name}.{args.format}", fmt=args.format)
    _finish(out, name, 'preset', seeds or [], {'preset': name, 'quick': quick, 'options': options or {}}, [path])
    if not table.passed:
        failed = [k for k, ok in table.checks.items() if not ok]
        logger.warning(f"Preset '{name}' checks failed: {failed}")
        if getattr(args, 'strict', False):
            return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_run(args, use_sweep: bool = False) -> int:
    config = load_config(args.config)
    if config.preset is not None and not use_sweep:
        seeds = args.seed or config.seeds or None
        return _run_preset(config.preset, args, seeds, config.preset_options)
    seeds = resolve_seeds(args.seed, config)
    rows = run_experiment(config, seeds, workers=args.workers, processes=args.processes, use_sweep=use_sweep)
    out = args.out or Path(config.output)
    path = write_rows(rows, out / f"results.{args.format}", fmt=args.format)
    _finish(out, config.name, 'sweep' if use_sweep else 'run', seeds, config_to_dict(config), [path])
    return EXIT_OK


def cmd_preset(args) -> int:
    return _run_preset(args.preset, args, args.seed)


def cmd_verify(args) -> int:
    seed = resolve_seeds(args.seed)[0]
    results = run_verify(seed=seed, suites=args.suite, quick=args.quick)
    for result in results:
        status = 'PASS' if result.passed else 'FAIL'
        print(f"{status:4}  {result.name:15} {result.checks:8d} checks  {result.seconds:6.1f}s")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY_FAILED


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, dispatch, and map failures to exit codes"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{parser.prog}: error: {e}\n")
        return EXIT_CONFIG
    setup_logging(args.log_level, args.log_dir)

    try:
        if args.command == 'run':
            return cmd_run(args)
        if args.command == 'sweep':
            return cmd_run(args, use_sweep=True)
        if args.command == 'preset':
            return cmd_preset(args)
        return cmd_verify(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NumericalDivergenceError as e:
        logger.error(f"Numerical divergence: {e}")
        return EXIT_DIVERGENCE
    except InvalidInputError as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_CONFIG
    except SimulationError as e:
        logger.error(f"Simulation error: {e}")
        return EXIT_CONFIG


def main():
    sys.exit(run_cli())


if __name__ == '__main__':
    main()
