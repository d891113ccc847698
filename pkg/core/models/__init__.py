from .layers import Module, count_parameters
from .tasks import TaskSpec, default_task_roster, resolve_tasks
from .mome import (
    GateTrace,
    MoMEModel,
    ModelOutput,
    aggregate_stage,
    embed_input,
    expert_forward,
    fuse_and_predict,
    main_gate_weights,
    model_forward,
    task_gate_weights,
    task_stage_representation,
)
from .checkpoint import CheckpointManager, checkpoint_roundtrip, load_checkpoint, save_checkpoint

__all__ = [
    "Module",
    "count_parameters",
    "TaskSpec",
    "default_task_roster",
    "resolve_tasks",
    "GateTrace",
    "MoMEModel",
    "ModelOutput",
    "aggregate_stage",
    "embed_input",
    "expert_forward",
    "fuse_and_predict",
    "main_gate_weights",
    "model_forward",
    "task_gate_weights",
    "task_stage_representation",
    "CheckpointManager",
    "checkpoint_roundtrip",
    "load_checkpoint",
    "save_checkpoint",
]
