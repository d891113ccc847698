from __future__ import annotations
import argparse
import logging
from dataclasses import replace

from app.commands.common import (
    add_checkpoint_args,
    add_common_args,
    add_data_arg,
    finish,
    load_model,
    load_split,
    prepare_out,
    print_json,
    resolve_config,
)
from core.pipelines.evaluation_pipeline import evaluate
from core.pipelines.reporting import write_report

logger = logging.getLogger(__name__)


def register(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("evaluate", help="Score a checkpoint: trait F1 (run/subject), gender, BMI, identification, heatmap")
    add_common_args(p)
    add_data_arg(p)
    add_checkpoint_args(p)
    p.set_defaults(handler=run)
    return p


def run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    model, scaler, _ = load_model(args, cfg)
    cfg = replace(cfg, model=model.cfg)
    out = prepare_out(cfg.out)
    report = evaluate(model, load_split(cfg, args.split), cfg, scaler)
    write_report(report, out)
    finish(cfg, out)
    summary = report.to_dict()
    summary.pop("identification", None)
    if report.identification is not None:
        summary["identification_mean"] = report.identification.mean
    print_json(summary)
    return 0
