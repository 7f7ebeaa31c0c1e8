#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
AGV SimOpt: имитационная модель сети AGV с зонным управлением (тележки операционного блока)
и подбор числа AGV по дням недели.
"""

import argparse
import sys
from pathlib import Path
from dotenv import load_dotenv

# Добавляем корень проекта, чтобы импорты source и config работали
sys.path.insert(0, str(Path(__file__).parent))

from config.settings import CONFIDENCE_LEVEL
from source.logger import logger
from source.command_handler import EXIT_ERROR, CommandHandler


def build_parser() -> argparse.ArgumentParser:
    """Аргументы командной строки."""
    parser = argparse.ArgumentParser(prog="agv-simopt", description="Zone-controlled AGV network simulation and fleet sizing")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="master seed (fallback: AGV_SIMOPT_SEED)")
    common.add_argument("--jobs", type=int, default=1, help="parallel replications")
    common.add_argument("--level", type=float, default=CONFIDENCE_LEVEL, help="confidence level")

    sim = argparse.ArgumentParser(add_help=False, parents=[common])
    sim.add_argument("--scenario", required=True, help="scenario TOML file")
    sim.add_argument("--reps", type=int, default=None, help="replications (overrides scenario)")
    sim.add_argument("--days", type=int, default=None, help="business days (overrides scenario)")
    sim.add_argument("--variant", choices=("M", "S"), default=None, help="layout variant (overrides scenario)")

    sub.add_parser("run", parents=[sim], help="simulate a scenario")
    sweep = sub.add_parser("sweep", parents=[sim], help="fleet-size sensitivity")
    sweep.add_argument("--fleet", default=None, help="fleet range A..B (default 3..pool size)")
    optimize = sub.add_parser("optimize", parents=[sim], help="fleet plan search")
    optimize.add_argument("--experiment", type=int, choices=(1, 2), default=1)
    optimize.add_argument("--budget", type=int, default=60, help="maximum plan evaluations")

    validate = sub.add_parser("validate", parents=[common], help="compare simulated and reference trips")
    validate.add_argument("--simulated", required=True)
    validate.add_argument("--reference", required=True)
    validate.add_argument("--variance-test", choices=("f", "levene"), default="f")
    validate.add_argument("--surgical-only", action="store_true")

    ingest = sub.add_parser("ingest", parents=[common], help="analyse an AGV trip log")
    ingest.add_argument("--log", required=True)
    ingest.add_argument("--surgical-only", action="store_true")
    ingest.add_argument("--max-minutes", type=float, default=None, help="drop longer trips as outliers")
    ingest.add_argument("--mode-estimator", choices=("nearest_mean", "mle"), default="nearest_mean")
    return parser


def main(argv=None) -> int:
    """Главная функция программы."""
    load_dotenv()
    args = build_parser().parse_args(argv)

    logger.info("=" * 50)
    logger.info(f"AGV SimOpt: {args.command}")
    logger.info("=" * 50)

    try:
        handler = CommandHandler(Path(args.out), seed=args.seed, jobs=args.jobs)
        return handler.handle_command(args)
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return EXIT_ERROR
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
