from __future__ import annotations
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.autodiff import backward, reset_tape
from core.config import RunConfig, TrainConfig
from core.data.loader import Dataset
from core.data.sequences import window_start
from core.data.traits import TRAIT_NAMES
from core.errors import DataError, NumericalError, TrainingAborted
from core.models.checkpoint import CheckpointManager
from core.models.losses import (
    BmiScaler,
    LossReport,
    combined_loss,
    entropy_regularization_loss,
    load_balancing_loss,
    task_loss,
)
from core.models.mome import MoMEModel, model_forward
from core.models.tasks import BMI, GENDER, IDENTITY, resolve_tasks
from core.pipelines.optim import AdamW, clip_gradients, cyclic_lr
from core.utils.file_utils import write_csv

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    indices: np.ndarray
    frames: np.ndarray  # (B, window, 17, 2)
    targets: Dict[str, np.ndarray]


@dataclass
class TrainResult:
    model: MoMEModel
    scaler: BmiScaler
    active_tasks: List[str]
    history: List[Dict[str, float]] = field(default_factory=list)
    metrics_path: Optional[str] = None
    checkpoint: Optional[str] = None


def task_targets(dataset: Dataset, indices: Sequence[int], scaler: Optional[BmiScaler] = None) -> Dict[str, np.ndarray]:
    labels = [dataset.labels(int(i)) for i in indices]
    out = {name: np.array([lab.traits[name] for lab in labels], dtype=np.int64) for name in TRAIT_NAMES}
    out[GENDER] = np.array([lab.gender for lab in labels], dtype=np.int64)
    bmi = np.array([lab.bmi for lab in labels], dtype=np.float64)
    out[BMI] = (scaler or BmiScaler()).transform(bmi).reshape(-1, 1)
    out[IDENTITY] = np.array([lab.identity for lab in labels], dtype=np.int64)
    return out


def window_frames(dataset: Dataset, indices: Sequence[int], window: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Normalized frames, a random window per sample with `rng`, the center window without."""
    out = []
    for i in indices:
        seq = dataset.normalized(int(i))
        start = window_start(seq.length, window, rng)
        out.append(seq.frames[start:start + window])
    return np.stack(out, axis=0)


def build_batch(
    dataset: Dataset,
    cfg: TrainConfig,
    window: int,
    seed: int = 0,
    identity_active: bool = True,
    scaler: Optional[BmiScaler] = None,
    rng: Optional[np.random.Generator] = None,
) -> Batch:
    """P identities x S samples when identification trains, otherwise a uniform draw of P*S."""
    rng = rng or np.random.default_rng(seed)
    if identity_active:
        by_subject = dataset.indices_by_subject()
        eligible = [s for s in sorted(by_subject) if len(by_subject[s]) >= cfg.batch_s]
        if len(eligible) < cfg.batch_p:
            raise DataError(
                f"batch needs {cfg.batch_p} identities with >= {cfg.batch_s} samples, only {len(eligible)} available; "
                f"lower train.batch_p or train.batch_s"
            )
        subjects = rng.choice(len(eligible), size=cfg.batch_p, replace=False)
        picks = []
        for s in subjects:
            pool = by_subject[eligible[int(s)]]
            picks.extend(int(pool[j]) for j in rng.choice(len(pool), size=cfg.batch_s, replace=False))
        indices = np.array(picks, dtype=np.int64)
    else:
        n = len(dataset)
        if n == 0:
            raise DataError("cannot draw a batch from an empty dataset")
        indices = rng.choice(n, size=cfg.batch_size, replace=cfg.batch_size > n).astype(np.int64)
    frames = window_frames(dataset, indices, window, rng)
    return Batch(indices=indices, frames=frames, targets=task_targets(dataset, indices, scaler))


def active_task_names(cfg: RunConfig, model: MoMEModel) -> List[str]:
    """Mask from train.active_tasks; a task whose loss weight is 0 counts as inactive."""
    names = [t.name for t in resolve_tasks(cfg.train.active_tasks, model.roster)]
    active = [n for n in names if cfg.loss.task_weights.get(n, cfg.loss.task_weight) > 0]
    if not active:
        raise DataError("every selected task has loss weight 0; nothing to train")
    return active


def compute_losses(model: MoMEModel, batch: Batch, cfg: RunConfig, active: Sequence[str], rng=None) -> LossReport:
    out = model_forward(model, batch.frames, tasks=active, rng=rng)
    losses = {}
    anchors = None
    for name in active:
        spec = model.task(name)
        loss, valid = task_loss(spec.loss, out.outputs[name], batch.targets[name], cfg.loss.triplet_margin)
        losses[name] = loss
        if valid is not None:
            anchors = valid
    lb = load_balancing_loss(out.trace, active)
    ent = entropy_regularization_loss(out.trace, active)
    report = combined_loss(
        losses,
        lb,
        ent,
        task_weights=cfg.loss.task_weights,
        default_weight=cfg.loss.task_weight,
        load_balance_weight=cfg.loss.load_balance_weight,
        entropy_weight=cfg.loss.entropy_weight,
    )
    report.valid_anchors = anchors
    return report


def metrics_header(active: Sequence[str]) -> List[str]:
    return ["epoch", "lr", *active, "load_balance", "entropy", "total"]


def train(
    cfg: RunConfig,
    dataset: Dataset,
    out_dir: Optional[str] = None,
    model: Optional[MoMEModel] = None,
    seed: Optional[int] = None,
) -> TrainResult:
    """
    Epoch loop: each epoch runs `steps_per_epoch` batches at the epoch's cyclic learning rate.
    Writes metrics.csv and epoch-numbered checkpoints under `out_dir` when given.
    """
    t = cfg.train
    seed = t.seed if seed is None else seed
    model = model or MoMEModel(cfg.model)
    active = active_task_names(cfg, model)
    frozen = set()
    for name in model.task_names:
        if name not in active:
            frozen |= set(model.private_parameters(name))
    trainable = [(n, p) for n, p in model.named_parameters() if n not in frozen]
    optimizer = AdamW(trainable, t.beta1, t.beta2, t.eps, t.weight_decay)
    scaler = BmiScaler.fit(dataset.bmi_values())
    manager = CheckpointManager(os.path.join(out_dir, "checkpoints")) if out_dir else None
    history: List[Dict[str, float]] = []
    logger.info(
        "[trainer] %d epochs x %d steps, batch %dx%d, active tasks: %s",
        t.epochs, t.steps_per_epoch, t.batch_p, t.batch_s, ", ".join(active),
    )
    if manager is not None:
        manager.save(model, 0, scaler.to_dict(), {"active_tasks": active, "seed": seed})

    identity_active = IDENTITY in active
    for epoch in range(t.epochs):
        lr = cyclic_lr(epoch, t.base_lr, t.max_lr, t.step_size, t.gamma)
        sums: Dict[str, float] = {}
        for step in range(t.steps_per_epoch):
            rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, step]))
            batch = build_batch(dataset, t, cfg.model.window, identity_active=identity_active, scaler=scaler, rng=rng)
            reset_tape()
            optimizer.zero_grad()
            try:
                report = compute_losses(model, batch, cfg, active, rng if cfg.model.dropout > 0 else None)
                values = report.values()
                if not math.isfinite(values["total"]):
                    raise NumericalError(f"non-finite total loss at epoch {epoch}")
                backward(report.total)
                grads, _ = clip_gradients(optimizer.gradients(), t.clip_norm)
                optimizer.step(lr, grads)
            except NumericalError as e:
                reset_tape()
                last = manager.last_good if manager else None
                logger.error("[trainer] aborting at epoch %d step %d: %s (last checkpoint: %s)", epoch, step, e, last)
                raise TrainingAborted(f"training aborted at epoch {epoch}, step {step}: {e}", last) from None
            for k, v in values.items():
                sums[k] = sums.get(k, 0.0) + v
        row = {"epoch": epoch, "lr": lr}
        row.update({k: v / t.steps_per_epoch for k, v in sums.items()})
        history.append(row)
        logger.info("[trainer] epoch=%d lr=%.6g total=%.5f", epoch, lr, row["total"])
        if manager is not None and t.checkpoint_every > 0 and (epoch + 1) % t.checkpoint_every == 0:
            manager.save(model, epoch + 1, scaler.to_dict(), {"active_tasks": active, "seed": seed})

    result = TrainResult(model=model, scaler=scaler, active_tasks=active, history=history)
    if out_dir:
        header = metrics_header(active)
        result.metrics_path = write_csv(
            os.path.join(out_dir, "metrics.csv"),
            header,
            ([int(r["epoch"])] + [float(r[h]) for h in header[1:]] for r in history),
        )
        final = manager.path_for(t.epochs)
        if manager.last_good != final:
            manager.save(model, t.epochs, scaler.to_dict(), {"active_tasks": active, "seed": seed})
        result.checkpoint = manager.last_good
    return result
