from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.autodiff import no_grad, ops
from core.config import EvalConfig, RunConfig
from core.data.loader import Dataset
from core.data.traits import TRAIT_NAMES
from core.errors import EvaluationError, join_names
from core.models.losses import BmiScaler
from core.models.metrics import argmax_lowest, bmi_mae, mean_or_nan, summarize_scores, weighted_f1
from core.models.mome import MoMEModel, model_forward
from core.models.tasks import BMI, CLASSIFICATION, EMBEDDING, GENDER, IDENTITY, REGRESSION
from core.pipelines.training_pipeline import window_frames

logger = logging.getLogger(__name__)


@dataclass
class PredictionRecord:
    index: int
    subject_id: str
    scenario: str
    view_angle: int
    run: int
    probs: Dict[str, np.ndarray] = field(default_factory=dict)
    bmi: Optional[float] = None
    embedding: Optional[np.ndarray] = None


@dataclass
class Predictions:
    records: List[PredictionRecord]
    gates: Dict[str, List[np.ndarray]]  # owner -> per stage (N, K_s)
    targets: Dict[str, np.ndarray]


@dataclass
class IdentificationTable:
    accuracy: Dict[str, Dict[int, float]]  # scenario -> probe angle -> accuracy
    scenario_mean: Dict[str, float]
    angle_mean: Dict[int, float]
    mean: float
    scored_pairs: int = 0

    def to_dict(self) -> Dict:
        return {
            "accuracy": {s: {str(a): v for a, v in row.items()} for s, row in self.accuracy.items()},
            "scenario_mean": dict(self.scenario_mean),
            "angle_mean": {str(a): v for a, v in self.angle_mean.items()},
            "mean": self.mean,
            "scored_pairs": self.scored_pairs,
        }


@dataclass
class Heatmap:
    rows: List[str]
    columns: List[Tuple[int, int]]  # (stage, expert)
    matrix: np.ndarray

    def block(self, row: int, stage: int) -> np.ndarray:
        cols = [i for i, (s, _) in enumerate(self.columns) if s == stage]
        return self.matrix[row, cols]


@dataclass
class EvaluationReport:
    run_level: Dict[str, float] = field(default_factory=dict)
    subject_level: Dict[str, float] = field(default_factory=dict)
    gender_f1: Optional[float] = None
    gender_f1_subject: Optional[float] = None
    bmi_mae: Optional[float] = None
    identification: Optional[IdentificationTable] = None
    auxiliary: List[Dict] = field(default_factory=list)
    heatmap: Optional[Heatmap] = None
    specialization: Optional[float] = None
    sharpness: Optional[float] = None
    samples: int = 0
    subjects: int = 0

    def to_dict(self) -> Dict:
        return {
            "samples": self.samples,
            "subjects": self.subjects,
            "run_level": dict(self.run_level),
            "subject_level": dict(self.subject_level),
            "gender_f1": self.gender_f1,
            "gender_f1_subject": self.gender_f1_subject,
            "bmi_mae": self.bmi_mae,
            "identification": self.identification.to_dict() if self.identification else None,
            "specialization": self.specialization,
            "sharpness": self.sharpness,
        }


def predict(
    model: MoMEModel,
    dataset: Dataset,
    window: Optional[int] = None,
    batch_size: int = 64,
    scaler: Optional[BmiScaler] = None,
) -> Predictions:
    """Center-window forward over every sequence, without recording gradients."""
    if len(dataset) == 0:
        raise EvaluationError("evaluation set is empty")
    window = window or model.cfg.window
    scaler = scaler or BmiScaler()
    records: List[PredictionRecord] = []
    gates: Dict[str, List[List[np.ndarray]]] = {}
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = list(range(start, min(start + batch_size, len(dataset))))
            out = model_forward(model, window_frames(dataset, idx, window))
            for owner, per_stage in out.trace.to_numpy().items():
                slots = gates.setdefault(owner, [[] for _ in per_stage])
                for s, arr in enumerate(per_stage):
                    slots[s].append(arr)
            decoded = {}
            for task in model.roster:
                o = out.outputs[task.name]
                if task.kind == CLASSIFICATION:
                    decoded[task.name] = ops.softmax(o, axis=-1).data
                elif task.kind == REGRESSION:
                    decoded[task.name] = scaler.inverse(o.data.reshape(-1))
                else:
                    decoded[task.name] = np.array(o.data)
            for row, i in enumerate(idx):
                rec = dataset.records[i]
                pr = PredictionRecord(i, rec.subject_id, rec.scenario, rec.view_angle, rec.run)
                for task in model.roster:
                    if task.kind == CLASSIFICATION:
                        pr.probs[task.name] = decoded[task.name][row]
                    elif task.kind == REGRESSION:
                        pr.bmi = float(decoded[task.name][row])
                    elif task.kind == EMBEDDING:
                        pr.embedding = decoded[task.name][row]
                records.append(pr)
    merged = {o: [np.concatenate(parts, axis=0) for parts in slots] for o, slots in gates.items()}
    labels = [dataset.labels(i) for i in range(len(dataset))]
    targets = {name: np.array([lab.traits[name] for lab in labels]) for name in TRAIT_NAMES}
    targets[GENDER] = np.array([lab.gender for lab in labels])
    targets[BMI] = np.array([lab.bmi for lab in labels], dtype=np.float64)
    targets[IDENTITY] = np.array([lab.identity for lab in labels])
    return Predictions(records=records, gates=merged, targets=targets)


def run_level_evaluate(preds: Predictions, model: MoMEModel, tasks: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """Weighted F1 per trait from one prediction per sample."""
    names = [n for n in (tasks or TRAIT_NAMES) if n in preds.records[0].probs]
    scores = {}
    for name in names:
        probs = np.stack([r.probs[name] for r in preds.records])
        scores[name] = weighted_f1(preds.targets[name], argmax_lowest(probs), model.task(name).out_dim)
    return scores


def subject_level_aggregate(records: Sequence[PredictionRecord], task: str) -> Dict[str, int]:
    """Per subject: argmax of the mean probability vector over all its samples (ties -> lower class)."""
    grouped: Dict[str, List[np.ndarray]] = {}
    for r in records:
        grouped.setdefault(r.subject_id, []).append(r.probs[task])
    return {s: int(argmax_lowest(np.mean(np.stack(v), axis=0))) for s, v in sorted(grouped.items())}


def subject_level_evaluate(preds: Predictions, model: MoMEModel, tasks: Optional[Sequence[str]] = None) -> Dict[str, float]:
    names = [n for n in (tasks or TRAIT_NAMES) if n in preds.records[0].probs]
    truth: Dict[str, int] = {}
    for r in preds.records:
        truth.setdefault(r.subject_id, r.index)
    scores = {}
    for name in names:
        agg = subject_level_aggregate(preds.records, name)
        subjects = sorted(agg)
        y_true = [int(preds.targets[name][truth[s]]) for s in subjects]
        scores[name] = weighted_f1(y_true, [agg[s] for s in subjects], model.task(name).out_dim)
    return scores


def _l2_normalize(x: np.ndarray) -> np.ndarray:
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / np.maximum(norm, 1e-12)


def identification_accuracy(
    embeddings: np.ndarray,
    subjects: Sequence[str],
    scenarios: Sequence[str],
    angles: Sequence[int],
    runs: Sequence[int],
    gallery_scenario: str = "NM",
    gallery_runs: int = 1,
    angle_average: str = "gallery_then_scenario",
) -> IdentificationTable:
    """
    Gallery: the first `gallery_runs` runs of `gallery_scenario` per (subject, angle).
    Probes: everything else. Every (probe angle, gallery angle) pair with different
    angles is scored by rank-1 Euclidean matching on L2-normalized embeddings.
    """
    emb = _l2_normalize(np.asarray(embeddings, dtype=np.float64))
    subjects = np.asarray(subjects)
    scenarios = np.asarray(scenarios)
    angles = np.asarray(angles, dtype=np.int64)
    runs = np.asarray(runs, dtype=np.int64)
    gallery = (scenarios == gallery_scenario) & (runs < gallery_runs)
    probe = ~gallery

    all_angles = sorted(set(angles.tolist()))
    missing = sorted({
        str(s) for s in set(subjects.tolist()) for a in all_angles
        if not np.any(gallery & (subjects == s) & (angles == a))
    })
    if missing:
        raise EvaluationError(f"no {gallery_scenario} gallery sample at every angle for subjects: {join_names(missing)}")

    hits: Dict[Tuple[str, int, int], Tuple[int, int]] = {}
    for ga in all_angles:
        g_mask = gallery & (angles == ga)
        g_emb, g_sub = emb[g_mask], subjects[g_mask]
        for pa in all_angles:
            if pa == ga:
                continue
            for sc in sorted(set(scenarios[probe & (angles == pa)].tolist())):
                p_mask = probe & (angles == pa) & (scenarios == sc)
                d = np.sqrt(((emb[p_mask][:, None, :] - g_emb[None, :, :]) ** 2).sum(axis=-1))
                best = g_sub[d.argmin(axis=1)]
                hits[(sc, pa, ga)] = (int((best == subjects[p_mask]).sum()), int(p_mask.sum()))

    if not hits:
        logger.warning("[evaluator] identification has no scorable angle pair (single view angle?)")
    table: Dict[str, Dict[int, float]] = {}
    for sc in sorted({k[0] for k in hits}):
        for pa in sorted({k[1] for k in hits if k[0] == sc}):
            pairs = [v for k, v in hits.items() if k[0] == sc and k[1] == pa]
            if angle_average == "pooled":
                acc = sum(h for h, _ in pairs) / max(1, sum(n for _, n in pairs))
            else:
                acc = float(np.mean([h / n for h, n in pairs]))
            table.setdefault(sc, {})[pa] = float(acc)
    scenario_mean = {sc: float(np.mean(list(row.values()))) for sc, row in table.items()}
    angle_mean = {}
    for pa in sorted({pa for row in table.values() for pa in row}):
        angle_mean[pa] = float(np.mean([row[pa] for row in table.values() if pa in row]))
    overall = mean_or_nan(list(scenario_mean.values()))
    return IdentificationTable(table, scenario_mean, angle_mean, overall, scored_pairs=len(hits))


def expert_activation_heatmap(gates: Dict[str, List[np.ndarray]], rows: Optional[Sequence[str]] = None) -> Heatmap:
    """Mean post-softmax gate weight per (owner, stage, expert) over all samples."""
    if not gates:
        raise EvaluationError("no gate traces to summarize")
    owners = list(rows) if rows is not None else ["main"] + sorted(o for o in gates if o != "main")
    per_stage = gates[owners[0]]
    if any(len(a) == 0 for a in per_stage):
        raise EvaluationError("gate traces are empty")
    columns = [(s + 1, k) for s, arr in enumerate(per_stage) for k in range(arr.shape[1])]
    matrix = np.array([np.concatenate([arr.mean(axis=0) for arr in gates[o]]) for o in owners])
    return Heatmap(rows=owners, columns=columns, matrix=matrix)


def gate_specialization(gates: Dict[str, List[np.ndarray]]) -> Tuple[float, float]:
    """
    (mean over gates of the largest average expert weight,
     mean over gates and samples of the largest per-sample weight).
    """
    avg_max, sample_max = [], []
    for per_stage in gates.values():
        for arr in per_stage:
            avg_max.append(float(arr.mean(axis=0).max()))
            sample_max.append(float(arr.max(axis=1).mean()))
    return float(np.mean(avg_max)), float(np.mean(sample_max))


def auxiliary_breakdown(preds: Predictions, model: MoMEModel, ident: Optional[IdentificationTable]) -> List[Dict]:
    """Identification accuracy, gender F1 and BMI MAE per (scenario, view angle), then scenario means."""
    recs = preds.records
    keys = sorted({(r.scenario, r.view_angle) for r in recs})
    rows = []
    for sc, angle in keys:
        idx = [i for i, r in enumerate(recs) if r.scenario == sc and r.view_angle == angle]
        row: Dict = {"scenario": sc, "view_angle": angle, "samples": len(idx)}
        row["identification"] = ident.accuracy.get(sc, {}).get(angle) if ident else None
        if GENDER in recs[0].probs:
            pred = argmax_lowest(np.stack([recs[i].probs[GENDER] for i in idx]))
            row["gender_f1"] = weighted_f1(preds.targets[GENDER][idx], pred, 2)
        if recs[0].bmi is not None:
            row["bmi_mae"] = bmi_mae([recs[i].bmi for i in idx], preds.targets[BMI][idx])
        rows.append(row)
    for sc in sorted({k[0] for k in keys}):
        block = [r for r in rows if r["scenario"] == sc]
        mean_row: Dict = {"scenario": sc, "view_angle": "mean", "samples": sum(r["samples"] for r in block)}
        for col in ("identification", "gender_f1", "bmi_mae"):
            vals = [r[col] for r in block if r.get(col) is not None]
            mean_row[col] = float(np.mean(vals)) if vals else None
        rows.append(mean_row)
    return rows


def evaluate(
    model: MoMEModel,
    dataset: Dataset,
    cfg: Optional[RunConfig] = None,
    scaler: Optional[BmiScaler] = None,
) -> EvaluationReport:
    cfg = cfg or RunConfig()
    ev: EvalConfig = cfg.eval
    preds = predict(model, dataset, model.cfg.window, ev.batch_size, scaler)
    report = EvaluationReport(samples=len(preds.records), subjects=len(dataset.subjects()))
    traits = [t for t in TRAIT_NAMES if t in model.task_names]
    if traits:
        report.run_level = summarize_scores(run_level_evaluate(preds, model, traits))
        report.subject_level = summarize_scores(subject_level_evaluate(preds, model, traits))
    if GENDER in model.task_names:
        report.gender_f1 = run_level_evaluate(preds, model, [GENDER])[GENDER]
        report.gender_f1_subject = subject_level_evaluate(preds, model, [GENDER])[GENDER]
    if BMI in model.task_names:
        report.bmi_mae = bmi_mae([r.bmi for r in preds.records], preds.targets[BMI])
    if IDENTITY in model.task_names:
        recs = preds.records
        report.identification = identification_accuracy(
            np.stack([r.embedding for r in recs]),
            [r.subject_id for r in recs],
            [r.scenario for r in recs],
            [r.view_angle for r in recs],
            [r.run for r in recs],
            ev.gallery_scenario,
            ev.gallery_runs,
            ev.angle_average,
        )
    report.auxiliary = auxiliary_breakdown(preds, model, report.identification)
    report.heatmap = expert_activation_heatmap(preds.gates, ["main"] + model.task_names)
    report.specialization, report.sharpness = gate_specialization(preds.gates)
    logger.info(
        "[evaluator] %d samples, run-level mean F1=%s, subject-level mean F1=%s",
        report.samples, report.run_level.get("mean"), report.subject_level.get("mean"),
    )
    return report
