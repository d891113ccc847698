"""Finite-difference check of the full training loss."""
from __future__ import annotations
import logging
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from core.autodiff import GradCheckReport, finite_difference_check
from core.config import RunConfig
from core.data.loader import Dataset
from core.data.synthetic import GeneratorSpec, generate_synthetic_dataset
from core.errors import ConfigError, GradientCheckFailed
from core.models.losses import BmiScaler
from core.models.mome import MoMEModel
from core.pipelines.training_pipeline import active_task_names, build_batch, compute_losses

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
CORRUPTION = 1e-2
GATE_LOGIT_STD = 1.0


def corrupt_first(name_to_corrupt: str, offset: float = CORRUPTION):
    def hook(name: str, grad: np.ndarray) -> np.ndarray:
        return grad + offset if name == name_to_corrupt else grad
    return hook


def check_config(cfg: RunConfig) -> RunConfig:
    """Dropout off and a 2 x 2 identity batch without gradient clipping."""
    return replace(
        cfg,
        model=replace(cfg.model, dropout=0.0),
        train=replace(cfg.train, batch_p=2, batch_s=2, clip_norm=0.0),
    )


def build_check_model(cfg: RunConfig, seed: int = 0) -> MoMEModel:
    """The configured model with every gate logit layer redrawn from N(0, GATE_LOGIT_STD)."""
    model = MoMEModel(cfg.model)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1, 0]))
    for name, p in model.gate_parameters().items():
        if name.endswith(".logits.weight"):
            p.data[...] = rng.normal(0.0, GATE_LOGIT_STD, size=p.shape)
    return model


def select_parameters(model: MoMEModel, only: Optional[Sequence[str]] = None):
    params = dict(model.named_parameters())
    if not only:
        return params
    picked = {n: p for n, p in params.items() if n.startswith(tuple(only))}
    if not picked:
        raise ConfigError(f"no parameter matches {list(only)}")
    return picked


def run_gradient_check(
    cfg: RunConfig,
    dataset: Optional[Dataset] = None,
    max_entries_per_tensor: Optional[int] = 3,
    epsilon: float = 1e-5,
    abs_tol: float = 1e-10,
    tolerance: float = DEFAULT_TOLERANCE,
    corrupt_gradient: bool = False,
    seed: int = 0,
    only: Optional[Sequence[str]] = None,
) -> GradCheckReport:
    """
    Compare the analytic gradient of the combined loss against central differences
    for every parameter tensor (or those whose name starts with one of `only`).
    Raises GradientCheckFailed when the worst error reaches `tolerance`.
    """
    cfg = check_config(cfg)
    if dataset is None:
        dataset = generate_synthetic_dataset(GeneratorSpec.from_config(cfg.data)).train
    model = build_check_model(cfg, seed)
    active = active_task_names(cfg, model)
    scaler = BmiScaler.fit(dataset.bmi_values())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0, 0]))
    batch = build_batch(dataset, cfg.train, cfg.model.window, identity_active="identity" in active, scaler=scaler, rng=rng)

    def loss():
        return compute_losses(model, batch, cfg, active).total

    params = select_parameters(model, only)
    hook = corrupt_first(next(iter(params))) if corrupt_gradient else None
    logger.info(
        "[gradcheck] %d tensors, %d parameters, %s entries per tensor",
        len(params), sum(p.size for p in params.values()), max_entries_per_tensor or "all",
    )
    report = finite_difference_check(
        loss,
        params,
        epsilon=epsilon,
        max_entries_per_tensor=max_entries_per_tensor,
        seed=seed,
        abs_tol=abs_tol,
        grad_hook=hook,
    )
    logger.info("[gradcheck] worst relative error %.3e in %s", report.max_relative_error, report.worst_tensor)
    if not report.passed(tolerance):
        err = GradientCheckFailed(
            f"gradient check failed: relative error {report.max_relative_error:.3e} >= {tolerance:g} "
            f"in {report.worst_tensor} at {report.worst_index}",
            report.worst_tensor,
            report.max_relative_error,
        )
        err.report = report
        raise err
    return report
