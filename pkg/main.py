# main.py
from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError as PydanticValidationError

from commands import register
from core.errors import AvanError, ValidationError
from services.config import config

log = logging.getLogger("avan")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="KEY=VALUE run config file")
    common.add_argument("--seed", type=int, default=None, help="override SEED")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--log-level", default=None, help="override LOG_LEVEL / AVAN_LOG_LEVEL")

    parser = argparse.ArgumentParser(prog="avan", description="adversarial visual attention from brain activity")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    register(sub, parents=[common])
    return parser


def _setup_logging(level: str) -> None:
    if not log.handlers:
        logging.basicConfig(
            level=getattr(logging, level.upper(), logging.INFO),
            format="%(asctime)s [%(levelname)s] %(threadName)s %(message)s",
        )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level or "INFO")
    try:
        cfg = config(args.config, seed=args.seed, log_level=args.log_level)
        logging.getLogger().setLevel(getattr(logging, cfg.log_level, logging.INFO))
        log.info("[cli] command=%s config=%s seed=%s dtype=%s", args.command, args.config, cfg.seed, cfg.dtype)
        return args.handler(args, cfg)
    except (ValidationError, PydanticValidationError) as e:
        log.error("[cli] %s: %s", args.command, e)
        return EXIT_USAGE
    except (AvanError, OSError) as e:
        log.error("[cli] %s failed: %s", args.command, f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
