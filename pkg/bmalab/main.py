import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from bmalab import __version__, config
from bmalab.commands.diagnose import DIAGNOSTICS, cmd_diagnose
from bmalab.commands.reproduce import SUITES, cmd_reproduce, reference_config
from bmalab.commands.simulate import cmd_simulate
from bmalab.commands.validate import cmd_validate
from bmalab.errors import BMAError, ConfigError
from bmalab.schemas import RunConfig, apply_overrides, load_config

logger = logging.getLogger(__name__)


def _add_run_flags(p: argparse.ArgumentParser, config_required: bool) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="JSON run document")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
    p.add_argument("--parallelism", type=int, default=None, help="worker processes (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="base seed, 0 <= seed < 2**64 (overrides config)")
    p.add_argument("--reps", type=int, default=None, help="replications (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmalab",
        description="Model-averaged aggregation of prior evidence sources: simulator and diagnostics",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="overrides BMA_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run every design point of a config")
    _add_run_flags(p, config_required=True)

    p = sub.add_parser("reproduce", help="run the reference suite: Models 1-3 over the e and T grids")
    _add_run_flags(p, config_required=False)
    p.add_argument("--suite", choices=SUITES, default="all")
    p.add_argument("--smoke", action="store_true", help="use BMA_SMOKE_REPLICATIONS replications")
    p.add_argument("--assignment", choices=("alternating", "rct"), default="alternating")

    p = sub.add_parser("diagnose", help="rate, decay, divergence or PAC diagnostics")
    _add_run_flags(p, config_required=True)
    p.add_argument("--diagnostic", choices=DIAGNOSTICS, required=True)

    p = sub.add_parser("validate-config", help="parse a config and print it with defaults filled")
    p.add_argument("--config", type=Path, required=True)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.command == "reproduce":
        base = load_config(args.config) if args.config else None
        cfg = reference_config(base, assignment=args.assignment)
    else:
        cfg = load_config(args.config)
    return apply_overrides(cfg, out_dir=args.out, parallelism=args.parallelism, seed=args.seed, reps=args.reps)


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    logger.info(f"bmalab {__version__}: {args.command}")

    try:
        if args.command == "validate-config":
            return cmd_validate(args.config)
        cfg = _resolve_config(args)
        if args.command == "simulate":
            status = cmd_simulate(cfg)
        elif args.command == "reproduce":
            status = cmd_reproduce(args.suite, cfg, smoke=args.smoke, reps=args.reps)
        else:
            status = cmd_diagnose(cfg, args.diagnostic)
    except ConfigError as exc:
        logger.error(exc.detail)
        return exc.exit_code
    except BMAError as exc:
        logger.exception(f"{args.command} failed: {exc.detail}")
        return exc.exit_code

    logger.info(f"{args.command} finished")
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
