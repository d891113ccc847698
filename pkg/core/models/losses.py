from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.autodiff import Tensor, as_tensor, ops
from core.errors import ConfigError, DataError, ShapeError
from core.models.mome import GateTrace

logger = logging.getLogger(__name__)

DISTANCE_EPS = 1e-12


@dataclass(frozen=True)
class BmiScaler:
    """Train-split BMI statistics used to standardize regression targets."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, values: Iterable[float]) -> "BmiScaler":
        arr = np.asarray(list(values), dtype=np.float64)
        if arr.size == 0:
            raise DataError("cannot fit BMI statistics on an empty split")
        std = float(arr.std())
        return cls(float(arr.mean()), std if std > 0 else 1.0)

    def transform(self, bmi) -> np.ndarray:
        return (np.asarray(bmi, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: Optional[Mapping[str, float]]) -> "BmiScaler":
        if not d:
            return cls()
        return cls(float(d["mean"]), float(d["std"]))


@dataclass
class LossReport:
    task_losses: Dict[str, Tensor]
    load_balance: Tensor
    entropy: Tensor
    total: Tensor
    weights: Dict[str, float] = field(default_factory=dict)
    valid_anchors: Optional[int] = None

    def values(self) -> Dict[str, float]:
        out = {name: float(t.item()) for name, t in self.task_losses.items()}
        out["load_balance"] = float(self.load_balance.item())
        out["entropy"] = float(self.entropy.item())
        out["total"] = float(self.total.item())
        return out


def cross_entropy_loss(logits, targets) -> Tensor:
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != t.size:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {t.size} targets")
    c = logits.shape[1]
    if t.size and (t.min() < 0 or t.max() >= c):
        raise DataError(f"cross_entropy: target out of range for {c} classes: {t.tolist()}")
    logp = ops.log_softmax(logits, axis=-1)
    picked = logp[np.arange(t.size), t]
    return ops.neg(ops.mean(picked))


def mse_loss(pred, target) -> Tensor:
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    if not np.all(np.isfinite(target)):
        raise DataError("mse: non-finite targets")
    diff = ops.sub(pred, target)
    return ops.mean(ops.mul(diff, diff))


def pairwise_distances(emb: Tensor) -> Tensor:
    """Euclidean distance matrix; the small epsilon keeps sqrt differentiable at 0."""
    b, d = emb.shape
    diff = ops.sub(ops.reshape(emb, (b, 1, d)), ops.reshape(emb, (1, b, d)))
    d2 = ops.sum(ops.mul(diff, diff), axis=-1)
    return ops.sqrt(ops.add(d2, DISTANCE_EPS))


def batch_hard_indices(dist: np.ndarray, identities: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(anchors, hardest positive, hardest negative) for every anchor that has both."""
    same = identities[:, None] == identities[None, :]
    eye = np.eye(len(identities), dtype=bool)
    pos_mask = same & ~eye
    neg_mask = ~same
    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    anchors = np.flatnonzero(valid)
    pos = np.where(pos_mask, dist, -np.inf).argmax(axis=1)[anchors]
    neg = np.where(neg_mask, dist, np.inf).argmin(axis=1)[anchors]
    return anchors, pos, neg


def triplet_loss_batch_hard(embeddings, identities, margin: float = 0.2) -> Tuple[Tensor, int]:
    """
    Batch-hard triplet loss. Returns (loss, number of valid anchors); a batch without
    any anchor that has both a positive and a negative scores 0.
    """
    emb = as_tensor(embeddings)
    ids = np.asarray(identities).reshape(-1)
    if emb.ndim != 2 or emb.shape[0] != ids.size:
        raise ShapeError(f"triplet: embeddings {emb.shape} vs {ids.size} identities")
    dist = pairwise_distances(emb)
    anchors, pos, neg = batch_hard_indices(dist.data, ids)
    if anchors.size == 0:
        logger.warning("[objectives] triplet batch has no valid anchor; loss set to 0")
        return ops.mul(ops.sum(emb), 0.0), 0
    d_ap = dist[anchors, pos]
    d_an = dist[anchors, neg]
    hinge = ops.relu(ops.add(ops.sub(d_ap, d_an), margin))
    return ops.mean(hinge), int(anchors.size)


def _gates(traces: GateTrace, task_names: Optional[Iterable[str]]):
    gates = traces.gates(task_names)
    if not gates:
        raise ShapeError("gate losses need a nonempty trace")
    return gates


def load_balancing_loss(traces: GateTrace, task_names: Optional[Iterable[str]] = None) -> Tensor:
    """Mean over gates of K * sum_k (batch-mean usage_k - 1/K)^2."""
    terms = []
    for _, _, alpha in _gates(traces, task_names):
        k = alpha.shape[-1]
        usage = ops.mean(alpha, axis=0)
        dev = ops.sub(usage, 1.0 / k)
        terms.append(ops.mul(ops.sum(ops.mul(dev, dev)), float(k)))
    return ops.mean(ops.stack(terms))


def entropy_regularization_loss(traces: GateTrace, task_names: Optional[Iterable[str]] = None) -> Tensor:
    """Mean over samples and gates of the gate entropy normalized by ln K (K = 1 gates give 0)."""
    terms = []
    for _, _, alpha in _gates(traces, task_names):
        k = alpha.shape[-1]
        if k == 1:
            terms.append(ops.mul(ops.sum(alpha), 0.0))
            continue
        ent = ops.neg(ops.sum(ops.xlogx(alpha), axis=-1))
        terms.append(ops.div(ops.mean(ent), math.log(k)))
    return ops.mean(ops.stack(terms))


def task_loss(kind_loss: str, output: Tensor, target, margin: float = 0.2) -> Tuple[Tensor, Optional[int]]:
    if kind_loss == "cross_entropy":
        return cross_entropy_loss(output, target), None
    if kind_loss == "mse":
        return mse_loss(output, target), None
    if kind_loss == "triplet":
        return triplet_loss_batch_hard(output, target, margin)
    raise ConfigError(f"unknown loss {kind_loss!r}")


def combined_loss(
    task_losses: Mapping[str, Tensor],
    load_balance: Tensor,
    entropy: Tensor,
    task_weights: Optional[Mapping[str, float]] = None,
    default_weight: float = 1.0,
    load_balance_weight: float = 0.01,
    entropy_weight: float = 0.001,
) -> LossReport:
    weights = {name: float((task_weights or {}).get(name, default_weight)) for name in task_losses}
    if any(w < 0 for w in weights.values()) or load_balance_weight < 0 or entropy_weight < 0 or default_weight < 0:
        raise ConfigError("loss weights must be >= 0")
    terms = [ops.mul(loss, w) for loss, w in zip(task_losses.values(), weights.values())]
    terms.append(ops.mul(load_balance, float(load_balance_weight)))
    terms.append(ops.mul(entropy, float(entropy_weight)))
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return LossReport(
        task_losses=dict(task_losses),
        load_balance=load_balance,
        entropy=entropy,
        total=total,
        weights=weights,
    )
