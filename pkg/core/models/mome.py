"""
Multi-stage mixture of movement experts.

Four stages coarsen the skeleton (joints -> limbs -> limb groups -> body). At each
stage K experts transform the previous representation, a main gate mixes their
outputs into the next stage input, and every task owns a gate that mixes the
experts' CLS summaries into a task-private stage representation. Per task, the four
stage representations are concatenated and decoded by a small MLP head.
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.autodiff import Tensor, as_tensor, ops
from core.config import ModelConfig, config_hash
from core.data.skeleton import NUM_JOINTS, SkeletonHierarchy, StageSpec, stage_partition
from core.errors import ConfigError, ShapeError
from core.models.layers import (
    LayerNorm,
    Linear,
    MLP,
    Module,
    ModuleDict,
    ModuleList,
    build_encoder,
    trunc_normal,
)
from core.models.tasks import EMBEDDING, TaskSpec, roster_for

logger = logging.getLogger(__name__)

UNIT_AXIS = 2   # (batch, frames, units, channels)
FRAME_AXIS = 1


class InputEmbedding(Module):
    """Lift (x, y) to c_1 and add learned per-joint and per-frame encodings."""

    def __init__(self, width: int, window: int, rng: np.random.Generator, bias: bool = False):
        super().__init__()
        self.proj = Linear(2, width, rng, bias=bias)
        self.parameter("joint_pos", trunc_normal(rng, (NUM_JOINTS, width)))
        self.parameter("frame_pos", trunc_normal(rng, (window, width)))
        self.window = window

    def forward(self, x: Tensor) -> Tensor:
        n = x.shape[FRAME_AXIS]
        if n > self.window:
            raise ShapeError(f"embed_input: {n} frames exceed the position table of {self.window}")
        h = ops.add(self.proj(x), self.joint_pos)
        frames = ops.reshape(self.frame_pos[:n], (n, 1, self.frame_pos.shape[1]))
        return ops.add(h, frames)


class Expert(Module):
    """Spatial encoder -> group merge (c_{s-1} -> c_s) -> temporal encoder with a CLS slot."""

    def __init__(
        self,
        stage: StageSpec,
        in_width: int,
        heads: int,
        depth: int,
        mlp_ratio: float,
        amplifier: float,
        rng: np.random.Generator,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.groups = stage.groups
        self.in_width, self.out_width = in_width, stage.channels
        self.spatial = build_encoder(in_width, heads, depth, mlp_ratio, amplifier, rng, dropout)
        self.merge = ModuleList([Linear(len(g) * in_width, stage.channels, rng) for g in stage.groups])
        self.parameter("cls", trunc_normal(rng, (stage.channels,)))
        self.temporal = build_encoder(stage.channels, heads, depth, mlp_ratio, amplifier, rng, dropout)

    def forward(self, h: Tensor, rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
        b, n, j, c = h.shape
        if c != self.in_width or j != sum(len(g) for g in self.groups):
            raise ShapeError(
                f"expert_forward: input {h.shape} does not match {sum(len(g) for g in self.groups)} units x {self.in_width}"
            )
        x = self.spatial(h, UNIT_AXIS, rng)
        merged = []
        for group, proj in zip(self.groups, self.merge):
            members = x[:, :, list(group), :]
            merged.append(proj(ops.reshape(members, (b, n, len(group) * c))))
        z = ops.stack(merged, axis=UNIT_AXIS)
        units = len(self.groups)
        cls = ops.broadcast_to(ops.reshape(self.cls, (1, 1, 1, self.out_width)), (b, 1, units, self.out_width))
        out = self.temporal(ops.concat([cls, z], axis=FRAME_AXIS), FRAME_AXIS, rng)
        return out[:, 1:], ops.mean(out[:, 0], axis=1)


class Gate(Module):
    """Expert-shaped encoder (scaled by `amplifier`), mean-pooled, then a zero-initialized K-way linear."""

    def __init__(
        self,
        in_width: int,
        num_experts: int,
        heads: int,
        depth: int,
        mlp_ratio: float,
        amplifier: float,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.num_experts = num_experts
        self.spatial = build_encoder(in_width, heads, depth, mlp_ratio, amplifier, rng)
        self.temporal = build_encoder(in_width, heads, depth, mlp_ratio, amplifier, rng)
        self.logits = Linear(in_width, num_experts, rng, zero_init=True)

    def forward(self, h: Tensor) -> Tensor:
        x = self.spatial(h, UNIT_AXIS)
        x = self.temporal(x, FRAME_AXIS)
        return self.logits(ops.mean(x, axis=(FRAME_AXIS, UNIT_AXIS)))


class Stage(Module):
    def __init__(self, spec: StageSpec, in_width: int, cfg: ModelConfig, tasks: Sequence[TaskSpec], rng: np.random.Generator):
        super().__init__()
        s = spec.index - 1
        k, heads = cfg.experts[s], cfg.heads[s]
        self.spec = spec
        self.experts = ModuleList([
            Expert(spec, in_width, heads, cfg.depth, cfg.mlp_ratio, cfg.expert_amplifier, rng, cfg.dropout)
            for _ in range(k)
        ])
        self.main_gate = Gate(in_width, k, heads, cfg.depth, cfg.mlp_ratio, cfg.main_gate_amplifier, rng)
        self.task_gates = ModuleDict({
            t.name: Gate(in_width, k, heads, cfg.depth, cfg.mlp_ratio, cfg.task_gate_amplifier, rng)
            for t in tasks
        })


class TaskHead(Module):
    """
    MLP decoder of one task. Embedding heads layer-normalize their input and return
    unit vectors; their output layer is drawn at fan-in scale.
    """

    def __init__(self, task: TaskSpec, in_width: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.task = task
        if task.kind == EMBEDDING:
            self.norm = LayerNorm(in_width)
            self.mlp = MLP(in_width, hidden, task.out_dim, rng, out_std=1.0 / math.sqrt(hidden))
        else:
            self.mlp = MLP(in_width, hidden, task.out_dim, rng)

    def forward(self, h: Tensor) -> Tensor:
        if self.task.kind == EMBEDDING:
            h = self.norm(h)
        out = self.mlp(h)
        if self.task.kind == EMBEDDING:
            norm = ops.sqrt(ops.add(ops.sum(ops.mul(out, out), axis=-1, keepdims=True), 1e-12))
            out = ops.div(out, norm)
        return out


@dataclass
class GateTrace:
    """Per-sample gate weights: main[s] is (B, K_s); tasks[t][s] is (B, K_s)."""

    main: List[Tensor] = field(default_factory=list)
    tasks: Dict[str, List[Tensor]] = field(default_factory=dict)

    @property
    def batch_size(self) -> int:
        return self.main[0].shape[0] if self.main else 0

    def gates(self, task_names: Optional[Iterable[str]] = None) -> List[Tuple[str, int, Tensor]]:
        """(owner, stage, weights) for the main gates plus the named task gates."""
        names = list(self.tasks) if task_names is None else [t for t in task_names if t in self.tasks]
        out = [("main", s + 1, a) for s, a in enumerate(self.main)]
        for name in names:
            out.extend((name, s + 1, a) for s, a in enumerate(self.tasks[name]))
        return out

    def to_numpy(self) -> Dict[str, List[np.ndarray]]:
        out = {"main": [a.data.copy() for a in self.main]}
        for name, alphas in self.tasks.items():
            out[name] = [a.data.copy() for a in alphas]
        return out


@dataclass
class ModelOutput:
    outputs: Dict[str, Tensor]
    trace: GateTrace
    features: Optional[Tensor] = None


class MoMEModel(Module):
    def __init__(
        self,
        cfg: Optional[ModelConfig] = None,
        hierarchy: Optional[SkeletonHierarchy] = None,
        roster: Optional[Sequence[TaskSpec]] = None,
    ):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.hierarchy = (hierarchy or stage_partition(cfg.channels)).validate()
        self.roster: Tuple[TaskSpec, ...] = tuple(roster) if roster is not None else roster_for(cfg.tasks, cfg.id_dim)
        if len(cfg.experts) != len(self.hierarchy.stages) or len(cfg.heads) != len(self.hierarchy.stages):
            raise ConfigError("model.experts and model.heads need one entry per stage")
        rng = np.random.default_rng(cfg.init_seed)
        self.embedding = InputEmbedding(self.hierarchy.channels[0], cfg.window, rng, bias=cfg.embed_bias)
        self.stages = ModuleList([
            Stage(spec, self.hierarchy.input_channels(spec.index), cfg, self.roster, rng)
            for spec in self.hierarchy.stages
        ])
        fused = sum(self.hierarchy.channels)
        self.heads = ModuleDict({t.name: TaskHead(t, fused, cfg.head_hidden, rng) for t in self.roster})
        logger.info(
            "[mome] %d tasks, experts=%s, channels=%s, %d parameters",
            len(self.roster), tuple(cfg.experts), self.hierarchy.channels, self.num_parameters(),
        )

    @property
    def task_names(self) -> List[str]:
        return [t.name for t in self.roster]

    def task(self, name: str) -> TaskSpec:
        for t in self.roster:
            if t.name == name:
                return t
        raise ConfigError(f"model has no task {name!r}")

    @property
    def config_hash(self) -> str:
        return config_hash(self.cfg, self.task_names)

    def private_parameters(self, task: str) -> Dict[str, Tensor]:
        """The head and the per-stage gates that belong to `task` alone."""
        self.task(task)
        prefixes = [f"heads.{task}."] + [f"stages.{s}.task_gates.{task}." for s in range(len(self.stages))]
        return {n: p for n, p in self.named_parameters() if any(n.startswith(pre) for pre in prefixes)}

    def gate_parameters(self) -> Dict[str, Tensor]:
        return {n: p for n, p in self.named_parameters() if ".main_gate." in n or ".task_gates." in n}

    def forward(self, x, tasks: Optional[Sequence[str]] = None, rng: Optional[np.random.Generator] = None) -> ModelOutput:
        return model_forward(self, x, tasks, rng)


# the per-step operations


def embed_input(model: MoMEModel, x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 3:
        x = ops.reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[-1] != 2:
        raise ShapeError(f"embed_input: expected (batch, frames, {NUM_JOINTS}, 2), got {x.shape}")
    if x.shape[2] != NUM_JOINTS:
        raise ShapeError(f"embed_input: expected {NUM_JOINTS} joints, got {x.shape[2]}")
    return model.embedding(x)


def expert_forward(expert: Expert, h: Tensor, rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
    return expert(h, rng)


def main_gate_weights(gate: Gate, h: Tensor) -> Tensor:
    return ops.softmax(gate(h), axis=-1)


def task_gate_weights(gate: Gate, h: Tensor) -> Tensor:
    return ops.softmax(gate(h), axis=-1)


def _mix(alpha: Tensor, items: Sequence[Tensor], op: str) -> Tensor:
    if alpha.shape[-1] != len(items):
        raise ShapeError(f"{op}: {alpha.shape[-1]} weights for {len(items)} experts")
    shapes = {t.shape for t in items}
    if len(shapes) != 1:
        raise ShapeError(f"{op}: expert outputs disagree in shape {sorted(shapes)}")
    b = alpha.shape[0]
    total = None
    for k, item in enumerate(items):
        w = ops.reshape(alpha[:, k], (b,) + (1,) * (item.ndim - 1))
        term = ops.mul(w, item)
        total = term if total is None else ops.add(total, term)
    return total


def aggregate_stage(alpha: Tensor, expert_outputs: Sequence[Tensor]) -> Tensor:
    return _mix(alpha, expert_outputs, "aggregate_stage")


def task_stage_representation(alpha: Tensor, summaries: Sequence[Tensor]) -> Tensor:
    return _mix(alpha, summaries, "task_stage_representation")


def fuse_and_predict(head: TaskHead, stage_reps: Sequence[Optional[Tensor]], num_stages: int = 4) -> Tensor:
    if len(stage_reps) != num_stages or any(r is None for r in stage_reps):
        raise ShapeError(
            f"fuse_and_predict: task {head.task.name} needs {num_stages} stage representations, got "
            f"{sum(r is not None for r in stage_reps)}"
        )
    return head(ops.concat(list(stage_reps), axis=-1))


def model_forward(
    model: MoMEModel,
    x,
    tasks: Optional[Sequence[str]] = None,
    rng: Optional[np.random.Generator] = None,
) -> ModelOutput:
    selected = model.task_names if tasks is None else [model.task(t).name for t in tasks]
    if x is None or np.size(x.data if isinstance(x, Tensor) else x) == 0:
        raise ShapeError("model_forward: empty batch")
    h = embed_input(model, x)
    reps: Dict[str, List[Tensor]] = {t: [] for t in selected}
    trace = GateTrace(main=[], tasks={t: [] for t in selected})
    for stage in model.stages:
        results = [expert_forward(e, h, rng) for e in stage.experts]
        zs = [z for z, _ in results]
        summaries = [c for _, c in results]
        for t in selected:
            alpha_t = task_gate_weights(stage.task_gates[t], h)
            trace.tasks[t].append(alpha_t)
            reps[t].append(task_stage_representation(alpha_t, summaries))
        alpha = main_gate_weights(stage.main_gate, h)
        trace.main.append(alpha)
        h = aggregate_stage(alpha, zs)
    outputs = {t: fuse_and_predict(model.heads[t], reps[t], len(model.stages)) for t in selected}
    return ModelOutput(outputs=outputs, trace=trace, features=h)


def stack_frames(sequences) -> np.ndarray:
    """(B, n, 17, 2) array from equally long PoseSequences."""
    lengths = {s.length for s in sequences}
    if len(lengths) != 1:
        raise ShapeError(f"batch mixes sequence lengths {sorted(lengths)}")
    return np.stack([np.asarray(s.frames, dtype=np.float64) for s in sequences], axis=0)
