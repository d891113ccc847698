"""Task-activation grid and multi-seed repetition."""
from __future__ import annotations
import logging
import os
from dataclasses import replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from core.config import RunConfig
from core.data.loader import Dataset
from core.models.mome import MoMEModel
from core.pipelines.evaluation_pipeline import EvaluationReport, evaluate
from core.pipelines.reporting import write_ablation_csv, write_report
from core.pipelines.training_pipeline import TrainResult, train

logger = logging.getLogger(__name__)

GROUPS = ("identity", "gender", "bmi", "traits")

# single tasks, traits + one, traits + two, everything
ABLATION_ROWS: Tuple[Tuple[int, FrozenSet[str]], ...] = (
    (1, frozenset({"identity"})),
    (2, frozenset({"gender"})),
    (3, frozenset({"bmi"})),
    (4, frozenset({"traits"})),
    (5, frozenset({"identity", "traits"})),
    (6, frozenset({"gender", "traits"})),
    (7, frozenset({"bmi", "traits"})),
    (8, frozenset({"identity", "gender", "traits"})),
    (9, frozenset({"identity", "bmi", "traits"})),
    (10, frozenset({"gender", "bmi", "traits"})),
    (11, frozenset(GROUPS)),
)

METRICS = ("identification", "gender_f1", "bmi_mae", "trait_f1_run", "trait_f1_subject")
_METRIC_GROUP = {
    "identification": "identity",
    "gender_f1": "gender",
    "bmi_mae": "bmi",
    "trait_f1_run": "traits",
    "trait_f1_subject": "traits",
}


def seeded_config(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, train=replace(cfg.train, seed=seed), model=replace(cfg.model, init_seed=seed))


def report_metrics(report: EvaluationReport) -> Dict[str, Optional[float]]:
    return {
        "identification": report.identification.mean if report.identification else None,
        "gender_f1": report.gender_f1,
        "bmi_mae": report.bmi_mae,
        "trait_f1_run": report.run_level.get("mean"),
        "trait_f1_subject": report.subject_level.get("mean"),
    }


def train_and_evaluate(
    cfg: RunConfig,
    train_set: Dataset,
    test_set: Dataset,
    out_dir: Optional[str] = None,
) -> Tuple[TrainResult, EvaluationReport]:
    result = train(cfg, train_set, out_dir, model=MoMEModel(cfg.model))
    report = evaluate(result.model, test_set, cfg, result.scaler)
    if out_dir:
        write_report(report, os.path.join(out_dir, "evaluation"))
    return result, report


def summarize_seeds(per_seed: Sequence[Dict[str, Optional[float]]]) -> Dict[str, Optional[float]]:
    """Mean and population std per metric over repeated runs."""
    out: Dict[str, Optional[float]] = {}
    for m in METRICS:
        vals = [r[m] for r in per_seed if r.get(m) is not None]
        out[m] = float(np.mean(vals)) if vals else None
        out[f"{m}_std"] = float(np.std(vals)) if vals else None
    return out


def run_seeds(
    cfg: RunConfig,
    train_set: Dataset,
    test_set: Dataset,
    seeds: Sequence[int],
    out_dir: Optional[str] = None,
) -> Tuple[List[Dict[str, Optional[float]]], Dict[str, Optional[float]]]:
    per_seed = []
    for seed in seeds:
        sub = os.path.join(out_dir, f"seed_{seed}") if out_dir else None
        _, report = train_and_evaluate(seeded_config(cfg, seed), train_set, test_set, sub)
        metrics = report_metrics(report)
        metrics["seed"] = seed
        per_seed.append(metrics)
        logger.info("[ablation] seed %d: %s", seed, {k: v for k, v in metrics.items() if v is not None})
    return per_seed, summarize_seeds(per_seed)


def run_ablation_grid(
    cfg: RunConfig,
    train_set: Dataset,
    test_set: Dataset,
    out_dir: Optional[str] = None,
    seeds: Optional[Sequence[int]] = None,
    rows: Optional[Sequence[int]] = None,
) -> List[Dict]:
    """Train and evaluate every mask row; metrics of inactive groups are left empty."""
    seeds = list(seeds or cfg.train.seeds or (cfg.train.seed,))
    selected = [r for r in ABLATION_ROWS if rows is None or r[0] in rows]
    table = []
    for row, groups in selected:
        row_cfg = replace(cfg, train=replace(cfg.train, active_tasks=tuple(sorted(groups))))
        sub = os.path.join(out_dir, f"row_{row:02d}") if out_dir else None
        logger.info("[ablation] row %d: %s", row, "+".join(g for g in GROUPS if g in groups))
        _, summary = run_seeds(row_cfg, train_set, test_set, seeds, sub)
        entry: Dict = {"row": row, "seeds": len(seeds)}
        for g in GROUPS:
            entry[g] = int(g in groups)
        for m in METRICS:
            active = _METRIC_GROUP[m] in groups
            entry[m] = summary[m] if active else None
            entry[f"{m}_std"] = summary[f"{m}_std"] if active else None
        table.append(entry)
    if out_dir:
        write_ablation_csv(table, os.path.join(out_dir, "ablation.csv"))
    return table
