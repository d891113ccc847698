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
from core.pipelines.evaluation_pipeline import expert_activation_heatmap, gate_specialization, predict
from core.pipelines.reporting import write_heatmap

logger = logging.getLogger(__name__)


def register(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("heatmap", help="Write only the expert-activation heatmap (CSV + SVG) for a checkpoint")
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
    preds = predict(model, load_split(cfg, args.split), model.cfg.window, cfg.eval.batch_size, scaler)
    heatmap = expert_activation_heatmap(preds.gates, ["main"] + model.task_names)
    paths = write_heatmap(heatmap, out)
    specialization, sharpness = gate_specialization(preds.gates)
    finish(cfg, out)
    print_json({"rows": len(heatmap.rows), "columns": len(heatmap.columns), "specialization": specialization,
                "sharpness": sharpness, **paths})
    return 0
