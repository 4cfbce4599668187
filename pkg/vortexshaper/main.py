"""
VortexShaper - Command Line Entry Point
Runs configured or bundled shaping experiments and prints saturation-intensity tables
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from vortexshaper import __version__
from vortexshaper.atoms.atomic_structure import PumpScheme, saturation_summary
from vortexshaper.config import load_config
from vortexshaper.experiments.presets import available_presets, load_preset
from vortexshaper.experiments.runner import run_experiment
from vortexshaper.utils.error_handler import ErrorHandler, VortexShaperError
from vortexshaper.utils.export_manager import FORMATS

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vortexshaper",
                                     description="Cold-atom cloud shaping with vortex beams")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true', help="debug logging")
    verbosity.add_argument('--quiet', action='store_true', help="warnings and errors only")
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help="run an experiment configuration or a bundled preset")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument('--config', help="path to a JSON experiment configuration")
    source.add_argument('--preset', help="bundled figure preset id, e.g. fig6")
    run.add_argument('--out', help="output directory (overrides output.directory)")
    run.add_argument('--seed', type=int, help="random seed (overrides cloud.seed and imaging.noise_seed)")
    run.add_argument('--threads', type=int, default=1, help="worker threads; 1 is bit-deterministic")
    run.add_argument('--format', action='append', choices=FORMATS, dest='formats',
                     help="artifact format, repeatable (overrides output.formats)")

    sat = commands.add_parser('sat', help="effective saturation intensity of a D2 hyperfine transition")
    sat.add_argument('--F', type=int, default=2, dest='F', help="ground hyperfine level")
    sat.add_argument('--F-prime', type=int, default=2, dest='F_prime', help="excited hyperfine level")
    sat.add_argument('--scheme', type=float, nargs=3, default=(0.5, 0.0, 0.5),
                     metavar=('P_PLUS', 'P_ZERO', 'P_MINUS'), help="polarization weights")
    sat.add_argument('--json', action='store_true', help="print JSON instead of a table")

    commands.add_parser('presets', help="list the bundled presets")
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def _run(args) -> int:
    config = load_preset(args.preset) if args.preset else load_config(args.config)
    config = config.with_overrides(out=args.out, seed=args.seed, formats=args.formats)
    result = run_experiment(config, threads=args.threads)
    print(f"{result.name}: {len(result.summary)} sweep points written to {result.output_dir}")
    return 0


def _sat(args) -> int:
    summary = saturation_summary(args.F, args.F_prime, PumpScheme(*args.scheme))
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0
    for key, value in summary.items():
        print(f"{key:>28}: {value}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse the command line and dispatch

    Returns:
        Process exit code: 0 success, 2 config error, 3 numerical failure, 4 unknown preset
    """
    args = _build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        if args.command == 'run':
            return _run(args)
        if args.command == 'sat':
            return _sat(args)
        print("\n".join(available_presets()))
        return 0
    except (VortexShaperError, ValueError) as e:
        error_type = ErrorHandler.detect_error_type(e)
        logger.error(f"{type(e).__name__}: {e}")
        print(ErrorHandler.format_error_message(error_type, str(e)), file=sys.stderr)
        return ErrorHandler.exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
