from __future__ import annotations
import argparse
import logging
import os

from app.commands.common import (
    add_common_args,
    add_data_arg,
    finish,
    load_split,
    load_splits,
    prepare_out,
    print_json,
    resolve_config,
)
from core.pipelines.ablation import run_ablation_grid, run_seeds, seeded_config
from core.pipelines.reporting import write_seed_summary
from core.pipelines.training_pipeline import train

logger = logging.getLogger(__name__)


def register(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("train", help="Train the multi-task model; optionally over seeds or the task-mask grid")
    add_common_args(p)
    add_data_arg(p)
    p.add_argument("--tasks", help="Active tasks: all, traits, gender, bmi, identity, task names; join with , or +")
    p.add_argument("--seeds", help="Comma-separated seeds; more than one trains and evaluates each and reports mean/std")
    p.add_argument("--ablation-grid", action="store_true", help="Run the 11 task-mask rows and write ablation.csv")
    p.add_argument("--epochs", type=int, help="Shortcut for train.epochs")
    p.set_defaults(handler=run)
    return p


def run(args: argparse.Namespace) -> int:
    extra = {}
    if args.tasks:
        extra["train.active_tasks"] = args.tasks
    if args.seeds:
        extra["train.seeds"] = args.seeds
    if args.epochs is not None:
        extra["train.epochs"] = args.epochs
    cfg = resolve_config(args, extra)
    out = prepare_out(cfg.out)
    seeds = list(cfg.train.seeds)

    if args.ablation_grid:
        splits = load_splits(cfg)
        table = run_ablation_grid(cfg, splits["train"], splits["test"], out, seeds=seeds or None)
        finish(cfg, out)
        print_json({"out": out, "rows": len(table), "ablation": os.path.join(out, "ablation.csv")})
        return 0

    if len(seeds) > 1:
        splits = load_splits(cfg)
        per_seed, summary = run_seeds(cfg, splits["train"], splits["test"], seeds, out)
        write_seed_summary(summary, os.path.join(out, "seed_summary.json"), {"seeds": per_seed})
        finish(cfg, out)
        print_json(summary)
        return 0

    if seeds:
        cfg = seeded_config(cfg, seeds[0])
    result = train(cfg, load_split(cfg, "train"), out)
    finish(cfg, out)
    print_json({
        "out": out,
        "active_tasks": result.active_tasks,
        "checkpoint": result.checkpoint,
        "metrics": result.metrics_path,
        "final_total": result.history[-1]["total"] if result.history else None,
    })
    return 0
