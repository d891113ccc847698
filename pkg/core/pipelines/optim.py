from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.autodiff import Tensor
from core.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)


def cyclic_lr(
    epoch: int,
    base_lr: float = 1e-4,
    max_lr: float = 9e-4,
    step_size: int = 25,
    gamma: float = 0.999,
) -> float:
    """Triangular cycle whose amplitude decays by gamma**epoch (exponential range policy)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    cycle = math.floor(1 + epoch / (2 * step_size))
    x = abs(epoch / step_size - 2 * cycle + 1)
    return base_lr + (max_lr - base_lr) * max(0.0, 1.0 - x) * gamma ** epoch


@dataclass
class OptimizerState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients together so the global norm is at most `max_norm` (0 disables)."""
    norm = global_grad_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    scale = max_norm / (norm + 1e-12)
    logger.debug("[optim] clipping global grad norm %.4g -> %.4g", norm, max_norm)
    return {k: g * scale for k, g in grads.items()}, norm


class AdamW:
    """AdamW with bias correction; weight decay is decoupled and applied as theta -= lr * wd * theta."""

    def __init__(
        self,
        params: Sequence[Tuple[str, Tensor]],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params: List[Tuple[str, Tensor]] = list(params)
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.state = OptimizerState()
        for name, p in self.params:
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def gradients(self) -> Dict[str, np.ndarray]:
        return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self, lr: float, grads: Optional[Mapping[str, np.ndarray]] = None) -> None:
        grads = self.gradients() if grads is None else grads
        adamw_step(self.params, grads, self.state, lr, self.beta1, self.beta2, self.eps, self.weight_decay)


def adamw_step(
    params: Sequence[Tuple[str, Tensor]],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> OptimizerState:
    for name, p in params:
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"adamw: gradient {g.shape} for parameter {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}; step aborted")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params:
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
