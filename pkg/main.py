#!/usr/bin/env python3
"""
gdesk - Main Entry Point

Batch experiments for G-expectations, G-Brownian paths and reflected
forward-backward G-SDEs.

Usage:
    python main.py SUBCOMMAND [--config PATH] [--seed N] [--out DIR] [--tol X]
                   [--steps N] [--family-depth N] [--backend {lattice,scenario}] [--debug]
    python main.py audit MANIFEST

Exit codes:
    0   success
    2   configuration error
    3   invariant or audit failure
    4   numerical abort
"""

import sys
import argparse
import logging
from pathlib import Path

from utils.logging_config import setup_logging
from utils.config import apply_overrides, load_config
from services.errors import GDeskError
from cli.commands import SUBCOMMANDS, audit_manifest, run


def parse_args(argv=None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        description="gdesk - G-expectation desk experiments"
    )

    parser.add_argument(
        'subcommand',
        choices=SUBCOMMANDS,
        help='Experiment to run'
    )

    parser.add_argument(
        'manifest',
        nargs='?',
        default=None,
        help='Manifest (or run directory) to re-run, for audit'
    )

    parser.add_argument(
        '--config', '-f',
        type=str,
        default=None,
        help='Path to experiment YAML file'
    )

    parser.add_argument('--seed', type=int, default=None, help='Root seed of the scenario streams')
    parser.add_argument('--out', type=str, default=None, help='Output directory')
    parser.add_argument('--tol', type=float, default=None, help='Outer stopping tolerance')
    parser.add_argument('--steps', type=int, default=None, help='Number of time steps N')
    parser.add_argument('--family-depth', type=int, default=None, help='Bang-bang family depth')
    parser.add_argument('--backend', choices=('lattice', 'scenario'), default=None, help='Solver backend')

    parser.add_argument(
        '--debug', '-d',
        action='store_true',
        help='Enable debug logging'
    )

    return parser.parse_args(argv)


def main(argv=None) -> int:
    """Main entry point; returns the exit status."""
    args = parse_args(argv)

    log_level = logging.DEBUG if args.debug else logging.INFO
    setup_logging(level=log_level, console=True)

    logger = logging.getLogger(__name__)
    logger.info(f"gdesk {args.subcommand} starting")

    try:
        if args.subcommand == "audit":
            if not args.manifest:
                logger.error("audit needs a manifest path")
                return 2
            names = audit_manifest(Path(args.manifest))
            logger.info(f"Audit passed for {len(names)} artifacts")
            return 0

        config = load_config(Path(args.config)) if args.config else load_config()
        config = apply_overrides(
            config,
            seed=args.seed,
            out=args.out,
            tol=args.tol,
            steps=args.steps,
            family_depth=args.family_depth,
            backend=args.backend,
        )
        manifest = run(args.subcommand, config, Path(config.output.dir))
        logger.info(f"Done; manifest at {manifest}")
        return 0

    except GDeskError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130
    except Exception as e:
        logger.exception(f"Fatal error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
