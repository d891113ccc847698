from __future__ import annotations
import argparse
import logging
import sys
from typing import List, Optional

from app.commands import COMMANDS
from app.utils.logger import setup_logging
from core.errors import GradientCheckFailed, MomeError, TrainingAborted

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mome",
        description="Multi-stage mixture of movement experts: gait trait / gender / BMI / identity pipeline",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)
    for command in COMMANDS:
        command.register(sub)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; a MomeError becomes its exit code (0 success, 2 config, 3 data, 4 numeric)."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return int(args.handler(args) or 0)
    except TrainingAborted as e:
        logger.error("[cli] %s", e)
        if e.last_checkpoint:
            print(f"error: {e} (last good checkpoint: {e.last_checkpoint})", file=sys.stderr)
        else:
            print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except GradientCheckFailed as e:
        logger.error("[cli] %s", e)
        print(f"error: {e} (worst parameter: {e.worst_tensor})", file=sys.stderr)
        return e.exit_code
    except MomeError as e:
        logger.error("[cli] %s", e)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
