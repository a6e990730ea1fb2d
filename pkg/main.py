"""
Main Application
NSNMF experiment command line: prepare, cv, train, eval, cluster, reproduce
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Tuple

import colorlog
from dotenv import load_dotenv

from errors import ConfigurationError, NsnmfError
from experiment_config import METHODS, PRESETS, expand_dims, load_config, validate_config
from experiment_runner import (
    cmd_cluster,
    cmd_cv,
    cmd_eval,
    cmd_prepare,
    cmd_reproduce,
    cmd_train,
    resolve_run_dir,
)
from rating_dataset import FORMAT_DELIMITERS

# Load environment variables
load_dotenv()


def setup_logging(log_level: str = 'INFO', log_file: str = 'nsnmf_experiments.log'):
    """Setup logging configuration"""

    console_formatter = colorlog.ColoredFormatter(
        '%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        log_colors={
            'DEBUG': 'cyan',
            'INFO': 'green',
            'WARNING': 'yellow',
            'ERROR': 'red',
            'CRITICAL': 'red,bg_white',
        }
    )

    file_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    root_logger = logging.getLogger()
    level = getattr(logging, log_level.upper(), None)
    if not isinstance(level, int):
        raise ConfigurationError(f"unknown log level {log_level!r}")
    root_logger.setLevel(level)
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)
        handler.close()

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(console_formatter)
    root_logger.addHandler(console_handler)

    # File handler
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(file_formatter)
        root_logger.addHandler(file_handler)

    return root_logger


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON config file (flags override its values)')
    common.add_argument('--preset', choices=sorted(PRESETS), help='dataset preset')
    common.add_argument('--out', help='run directory (default: $NSNMF_OUTPUT_ROOT/<dataset name>)')
    common.add_argument('--jobs', type=int, help='parallel worker processes (default: $NSNMF_JOBS or 1)')
    common.add_argument('--method', choices=sorted(METHODS), help='method tag')
    common.add_argument('--dims', type=int, nargs='+', help='layer widths; one value is repeated per layer')
    common.add_argument('--layers', type=int, help='number of factor layers (NSNMF depth)')
    common.add_argument('--eta', type=float, help='learning rate')
    common.add_argument('--lambda', dest='lam', type=float, help='regularizer')
    common.add_argument('--epochs', type=int, help='training epochs')
    common.add_argument('--seed', type=int, help='seed for split, folds and training')
    common.add_argument('--folds', type=int, help='cross-validation folds')

    parser = argparse.ArgumentParser(
        prog='nsnmf',
        description='Multilayer non-linear semi-NMF rating experiments',
    )
    commands = parser.add_subparsers(dest='command', required=True)

    prepare = commands.add_parser('prepare', parents=[common], help='load, filter and split a rating file')
    prepare.add_argument('--dataset', help='rating file path')
    prepare.add_argument('--format', choices=sorted(FORMAT_DELIMITERS), help='rating file format')
    prepare.add_argument('--name', help='dataset name used for the default run directory')

    for name, help_text in (('cv', 'cross-validated grid search'),
                            ('train', 'train one method on the prepared split'),
                            ('eval', 'test RMSE of a trained method'),
                            ('cluster', 'k-means WCSS study of item representations')):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument('--name', help='dataset name used for the default run directory')

    reproduce = commands.add_parser('reproduce', parents=[common],
                                    help='prepare, train, eval and cluster for each dataset')
    reproduce.add_argument('--dataset', action='append', default=[], metavar='PRESET=PATH',
                           help='dataset to reproduce, e.g. movielens=ml-latest-small/ratings.csv')
    return parser


def _overrides(args: argparse.Namespace) -> Dict:
    """Nested config values taken from flags"""
    overrides: Dict = {}

    def put(section: Optional[str], key: str, value):
        if value is None:
            return
        if section is None:
            overrides[key] = value
        else:
            overrides.setdefault(section, {})[key] = value

    if args.command != 'reproduce':
        put('dataset', 'path', getattr(args, 'dataset', None))
    put('dataset', 'format', getattr(args, 'format', None))
    put('dataset', 'name', getattr(args, 'name', None))
    put(None, 'method', args.method)
    put('train', 'eta', args.eta)
    put('train', 'lambda', args.lam)
    put('train', 'epochs', args.epochs)
    put('cv', 'folds', args.folds)
    if args.seed is not None:
        for section in ('split', 'train', 'cv'):
            put(section, 'seed', args.seed)
    return overrides


def _parse_datasets(entries: List[str]) -> List[Tuple[str, str]]:
    datasets = []
    for entry in entries:
        preset, sep, path = entry.partition('=')
        if not sep or not path:
            raise ConfigurationError(f"expected PRESET=PATH, got {entry!r}")
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        datasets.append((preset, path))
    return datasets


def run(args: argparse.Namespace):
    jobs = args.jobs if args.jobs is not None else int(os.getenv('NSNMF_JOBS', '1'))
    if jobs < 1:
        raise ConfigurationError(f"--jobs must be at least 1, got {jobs}")

    if args.command == 'reproduce':
        if args.dims is not None or args.layers is not None:
            raise ConfigurationError("reproduce uses each preset's widths; drop --dims/--layers")
        root = args.out or os.getenv('NSNMF_OUTPUT_ROOT') or 'runs'
        return cmd_reproduce(_parse_datasets(args.dataset), root, jobs=jobs,
                             config_file=args.config, overrides=_overrides(args))

    config = load_config(args.config, preset=args.preset, overrides=_overrides(args))
    if args.dims is not None or args.layers is not None:
        config['train']['dims'] = expand_dims(args.dims, args.layers, config['train']['dims'])
        validate_config(config)
    run_dir = resolve_run_dir(config, args.out)

    if args.command == 'prepare':
        return cmd_prepare(config, run_dir)
    if args.command == 'cv':
        return cmd_cv(config, run_dir, jobs=jobs)
    if args.command == 'train':
        return cmd_train(config, run_dir)
    if args.command == 'eval':
        return cmd_eval(config, run_dir)
    if args.command == 'cluster':
        return cmd_cluster(config, run_dir, jobs=jobs)
    raise ConfigurationError(f"unknown command {args.command!r}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point; returns the process exit code"""
    args = build_parser().parse_args(argv)

    log_level = os.getenv('LOG_LEVEL', 'INFO')
    log_file = os.getenv('LOG_FILE', 'nsnmf_experiments.log')
    try:
        logger = setup_logging(log_level, log_file)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code

    logger.info("=" * 60)
    logger.info(f"NSNMF experiments - {args.command}")
    logger.info("=" * 60)

    try:
        run(args)
    except NsnmfError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130
    except Exception as e:
        logger.error(f"❌ Unexpected error in {args.command}: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1

    logger.info(f"✅ {args.command} finished")
    return 0


if __name__ == '__main__':
    sys.exit(main())
