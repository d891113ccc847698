from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from core.autodiff.tensor import Tensor, backward, no_grad, reset_tape
from core.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-12
GradHook = Callable[[str, np.ndarray], np.ndarray]


@dataclass
class GradCheckReport:
    max_relative_error: float = 0.0
    worst_tensor: Optional[str] = None
    worst_index: Optional[Tuple[int, ...]] = None
    per_tensor: Dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error < tolerance

    def to_dict(self) -> Dict:
        return {
            "max_relative_error": self.max_relative_error,
            "worst_tensor": self.worst_tensor,
            "worst_index": list(self.worst_index) if self.worst_index is not None else None,
            "checked_entries": self.checked_entries,
            "per_tensor": dict(sorted(self.per_tensor.items())),
        }


def relative_error(analytic: float, numeric: float, abs_tol: float = 0.0) -> float:
    diff = abs(analytic - numeric)
    if diff <= abs_tol:
        return 0.0
    return diff / max(abs(analytic), abs(numeric), DENOMINATOR_FLOOR)


def _named(params: Union[Mapping[str, Tensor], Sequence[Tensor]]) -> Dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {(p.name or f"param_{i}"): p for i, p in enumerate(params)}


def _evaluate(f: Callable[[], Tensor]) -> float:
    with no_grad():
        value = f().item()
    if not np.isfinite(value):
        raise NumericalError("finite-difference evaluation produced a non-finite value")
    return value


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Union[Mapping[str, Tensor], Sequence[Tensor]],
    epsilon: float = 1e-5,
    max_entries_per_tensor: Optional[int] = None,
    seed: int = 0,
    abs_tol: float = 1e-10,
    grad_hook: Optional[GradHook] = None,
) -> GradCheckReport:
    """
    Compare reverse-mode gradients of scalar `f` against central differences
    (f(p + eps) - f(p - eps)) / 2 eps, entry by entry.

    `max_entries_per_tensor` samples that many coordinates per parameter (seeded);
    None checks every coordinate. `grad_hook(name, grad)` may rewrite the analytic
    gradient before comparison.
    """
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    named = _named(params)
    for name, p in named.items():
        if not p.requires_grad:
            raise ConfigError(f"parameter {name} does not require grad")
        p.zero_grad()

    reset_tape()
    loss = f()
    if not np.isfinite(loss.item()):
        raise NumericalError("loss is non-finite at the check point")
    grads = backward(loss)

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, p in named.items():
        analytic = grads.get(p)
        analytic = np.zeros_like(p.data) if analytic is None else analytic
        if grad_hook is not None:
            analytic = grad_hook(name, analytic)
        flat_count = p.data.size
        if max_entries_per_tensor is None or max_entries_per_tensor >= flat_count:
            picks = np.arange(flat_count)
        else:
            picks = np.sort(rng.choice(flat_count, size=max_entries_per_tensor, replace=False))

        worst = 0.0
        for flat in picks:
            idx = np.unravel_index(int(flat), p.data.shape)
            original = p.data[idx]
            p.data[idx] = original + epsilon
            plus = _evaluate(f)
            p.data[idx] = original - epsilon
            minus = _evaluate(f)
            p.data[idx] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            err = relative_error(float(analytic[idx]), numeric, abs_tol)
            report.checked_entries += 1
            if err > worst:
                worst = err
            if err > report.max_relative_error:
                report.max_relative_error = err
                report.worst_tensor = name
                report.worst_index = tuple(int(i) for i in idx)
        report.per_tensor[name] = worst

    logger.debug(
        "[gradcheck] entries=%d worst=%.3e tensor=%s",
        report.checked_entries, report.max_relative_error, report.worst_tensor,
    )
    return report
