from __future__ import annotations
import argparse
import logging
import os

from app.commands.common import add_common_args, finish, prepare_out, print_json, resolve_config
from core.errors import GradientCheckFailed
from core.pipelines.gradient_check import DEFAULT_TOLERANCE, run_gradient_check
from core.utils.file_utils import write_json

logger = logging.getLogger(__name__)


def register(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("gradcheck", help="Finite-difference check of the full loss gradient (tiny preset by default)")
    add_common_args(p, default_preset="tiny")
    p.add_argument("--entries", type=int, default=3, help="Coordinates sampled per parameter tensor; 0 checks all")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="Maximum allowed relative error")
    p.add_argument("--corrupt-gradient", action="store_true", help="Perturb one analytic gradient (the check must fail)")
    p.add_argument("--only", action="append", default=None, metavar="PREFIX",
                   help="Check only parameters whose name starts with PREFIX (repeatable)")
    p.set_defaults(handler=run)
    return p


def run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = prepare_out(cfg.out)
    payload = {"tolerance": args.tolerance, "corrupt_gradient": bool(args.corrupt_gradient), "only": args.only}
    try:
        report = run_gradient_check(
            cfg,
            max_entries_per_tensor=args.entries or None,
            tolerance=args.tolerance,
            corrupt_gradient=args.corrupt_gradient,
            seed=cfg.train.seed,
            only=args.only,
        )
    except GradientCheckFailed as e:
        failed = getattr(e, "report", None)
        payload.update(failed.to_dict() if failed is not None else {"worst_tensor": e.worst_tensor})
        payload["passed"] = False
        write_json(os.path.join(out, "gradcheck.json"), payload)
        finish(cfg, out)
        raise
    payload.update(report.to_dict())
    payload["passed"] = True
    write_json(os.path.join(out, "gradcheck.json"), payload)
    finish(cfg, out)
    print_json({k: payload[k] for k in ("passed", "max_relative_error", "worst_tensor", "checked_entries")})
    return 0
