# lab/main.py
"""
Command Line Interface

Builds the argument parser and dispatches to one handler per subcommand.
Errors end as a nonzero exit status plus a one-line JSON object on stderr.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from lab.errors import ConfigError, IdxFormatError, LabError
from lab.experiment import CRITERIA, SCHEMES
from lab.handlers.analyze import handle_analyze
from lab.handlers.gen_data import handle_gen_data
from lab.handlers.neuron import handle_neuron
from lab.handlers.prune import handle_prune
from lab.handlers.report import handle_report
from lab.neuron_theory import TOY_EPOCHS, TOY_LR

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_LAB = 4

# PARSER

def _add_neuron(subparsers) -> None:
    p = subparsers.add_parser('neuron', help='Single hidden neuron experiments')
    p.add_argument('--d', type=int, default=10, help='Input dimension')
    p.add_argument('--n', type=int, default=1000, help='Training samples')
    p.add_argument('--sigma2', type=float, default=0.01, help='Label noise variance')
    p.add_argument('--levels', type=int, default=3)
    p.add_argument('--target-sparsity', type=float, default=0.9)
    p.add_argument('--seeds', type=int, default=10, help='Runs per quadrant')
    p.add_argument('--seed', type=int, default=0, help='First seed')
    p.add_argument('--epochs-per-level', type=int, default=TOY_EPOCHS)
    p.add_argument('--lr', type=float, default=TOY_LR)
    p.add_argument('--scheme', choices=('imp', 'lrr', 'both'), default='both')
    p.add_argument('--sweep', type=str, default=None, help='Comma-separated input dimensions, e.g. 1,2,5,10')
    p.add_argument('--univariate', action='store_true', help='Univariate outcome table per quadrant')
    p.add_argument('--closed-form', action='store_true', help='Closed-form solution against RK4')
    p.add_argument('--t-end', type=float, default=10.0)
    p.add_argument('--step', type=float, default=1e-3)
    p.add_argument('--csv', type=str, default=None, help='Write one row per run to this CSV')
    p.add_argument('--tag', type=str, default='quadrant', help='Experiment tag in the registry')
    p.set_defaults(handler=handle_neuron)


def _add_prune(subparsers) -> None:
    p = subparsers.add_parser('prune', help='Iterative pruning over a seed x scheme matrix')
    p.add_argument('--config', type=str, default=None, help='YAML experiment config')
    p.add_argument('--scheme', action='append', choices=SCHEMES, default=None,
                   help='Repeat to run several schemes')
    p.add_argument('--criterion', choices=CRITERIA, default=None)
    p.add_argument('--seeds', type=int, default=None)
    p.add_argument('--seed-offset', type=int, default=0)
    p.add_argument('--levels', type=int, default=None)
    p.add_argument('--epochs', type=int, default=None, help='Epochs per level')
    p.add_argument('--workers', type=int, default=None)
    p.add_argument('--output-root', type=str, default=None)
    p.add_argument('--perturb-level', type=int, default=None)
    p.add_argument('--perturb-fraction', type=float, default=None)
    p.add_argument('--mask-run', type=str, default=None, help='Run dir to take masks from; may contain {seed}')
    p.add_argument('--signs-run', type=str, default=None, help='Run dir to take signs from; may contain {seed}')
    p.set_defaults(handler=handle_prune)


def _add_analyze(subparsers) -> None:
    p = subparsers.add_parser('analyze', help='Sign statistics of finished runs')
    p.add_argument('run_dirs', nargs='+', metavar='RUN_DIR')
    p.add_argument('--compare', nargs=2, metavar=('RUN_DIR_A', 'RUN_DIR_B'), default=None)
    p.add_argument('--out', type=str, default='analysis')
    p.set_defaults(handler=handle_analyze)


def _add_gen_data(subparsers) -> None:
    p = subparsers.add_parser('gen-data', help='Synthesize a Gaussian-mixture task')
    p.add_argument('--out', type=str, required=True)
    p.add_argument('--classes', type=int, default=10)
    p.add_argument('--dim', type=int, default=64)
    p.add_argument('--n-train', type=int, default=2000)
    p.add_argument('--n-test', type=int, default=1000)
    p.add_argument('--separation', type=float, default=0.35)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(handler=handle_gen_data)


def _add_report(subparsers) -> None:
    p = subparsers.add_parser('report', help='Aggregate metrics over seeds')
    p.add_argument('--output-root', type=str, default=None)
    p.add_argument('--out', type=str, default=None)
    p.set_defaults(handler=handle_report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='lab', description='Desk-scale sparsification laboratory')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for add in (_add_neuron, _add_prune, _add_analyze, _add_gen_data, _add_report):
        add(subparsers)
    return parser

# ERROR REPORTING

def _fail(status: int, code: str, message: str) -> int:
    logger.error(f"❌ {code}: {message}")
    print(json.dumps({'error': code, 'message': message}), file=sys.stderr)
    return status

# ENTRY POINT

def cli_main(argv: Optional[List[str]] = None) -> int:
    """
    Parse argv and run the subcommand

    Returns:
        0 on success, 2 for configuration errors, 3 for IO and IDX
        format errors, 4 for any other lab error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return args.handler(args)

    except ConfigError as e:
        return _fail(EXIT_CONFIG, e.code, str(e))
    except IdxFormatError as e:
        return _fail(EXIT_IO, e.code, str(e))
    except LabError as e:
        return _fail(EXIT_LAB, e.code, str(e))
    except OSError as e:
        return _fail(EXIT_IO, type(e).__name__, str(e))
    except ValueError as e:
        return _fail(EXIT_CONFIG, type(e).__name__, str(e))
