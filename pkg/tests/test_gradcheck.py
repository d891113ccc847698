import numpy as np
import pytest

from core.autodiff import backward, reset_tape
from core.errors import ConfigError, GradientCheckFailed
from core.models.losses import BmiScaler
from core.pipelines.gradient_check import (
    DEFAULT_TOLERANCE,
    build_check_model,
    check_config,
    run_gradient_check,
    select_parameters,
)
from core.pipelines.training_pipeline import active_task_names, build_batch, compute_losses

# one stage's gates, one expert's merge, the input embedding and every head
SUBSET = (
    "embedding.",
    "stages.3.main_gate.",
    "stages.3.task_gates.identity.",
    "stages.3.experts.0.merge.",
    "stages.3.experts.0.cls",
    "heads.",
)


def test_loss_gradient_matches_finite_differences_on_a_subset(tiny_cfg, tiny_data):
    report = run_gradient_check(tiny_cfg, tiny_data.train, max_entries_per_tensor=1, only=SUBSET)
    assert report.max_relative_error < DEFAULT_TOLERANCE
    assert report.checked_entries == len(report.per_tensor)
    assert all(name.startswith(SUBSET) for name in report.per_tensor)
    identity = {n: e for n, e in report.per_tensor.items() if n.startswith("heads.identity.")}
    assert "heads.identity.mlp.fc2.bias" in identity
    assert max(identity.values()) < DEFAULT_TOLERANCE
    assert any(".spatial." in n for n in report.per_tensor)


def test_check_model_routes_gradient_into_gate_encoders(tiny_cfg, tiny_data):
    cfg = check_config(tiny_cfg)
    model = build_check_model(cfg)
    active = active_task_names(cfg, model)
    scaler = BmiScaler.fit(tiny_data.train.bmi_values())
    batch = build_batch(tiny_data.train, cfg.train, cfg.model.window, identity_active=True, scaler=scaler,
                        rng=np.random.default_rng(0))
    reset_tape()
    backward(compute_losses(model, batch, cfg, active).total)
    gates = model.gate_parameters()
    assert all(np.any(p.data) for n, p in gates.items() if n.endswith(".logits.weight"))
    encoders = [p for n, p in gates.items() if ".spatial." in n and n.endswith(".weight")]
    assert encoders
    assert any(p.grad is not None and np.any(p.grad) for p in encoders)


def test_identity_head_emits_well_scaled_raw_embeddings(tiny_model):
    head = tiny_model.heads["identity"]
    width = head.norm.gamma.shape[0]
    h = np.random.default_rng(2).normal(scale=0.03, size=(8, width))
    raw = head.mlp(head.norm(h)).data
    assert np.linalg.norm(raw, axis=-1).min() > 1e-2
    unit = head(h).data
    assert np.allclose(np.linalg.norm(unit, axis=-1), 1.0)


def test_unknown_parameter_prefix(tiny_cfg):
    with pytest.raises(ConfigError, match="no parameter matches"):
        select_parameters(build_check_model(check_config(tiny_cfg)), ["nope."])


def test_corrupted_gradient_is_caught(tiny_cfg, tiny_data):
    with pytest.raises(GradientCheckFailed) as exc:
        run_gradient_check(tiny_cfg, tiny_data.train, max_entries_per_tensor=1, corrupt_gradient=True,
                           only=["heads."])
    err = exc.value
    assert err.worst_tensor == err.report.worst_tensor
    assert err.worst_tensor.startswith("heads.")
    assert err.worst_error >= DEFAULT_TOLERANCE
    assert err.worst_tensor in str(err)


@pytest.mark.slow
def test_full_loss_gradient_matches_finite_differences(tiny_cfg, tiny_data):
    report = run_gradient_check(tiny_cfg, tiny_data.train, max_entries_per_tensor=1)
    assert report.max_relative_error < DEFAULT_TOLERANCE
    assert any("gate" in name for name in report.per_tensor)
    assert any(name.startswith("heads.identity.") for name in report.per_tensor)


@pytest.mark.slow
def test_every_entry_of_the_tiny_model(tiny_cfg, tiny_data):
    report = run_gradient_check(tiny_cfg, tiny_data.train, max_entries_per_tensor=None)
    assert report.passed()
