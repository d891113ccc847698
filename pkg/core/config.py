from __future__ import annotations
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from core.errors import ConfigError

# .env support
try:
    from dotenv import load_dotenv
    load_dotenv()
except Exception:
    pass

BASE_DIR = Path(__file__).resolve().parents[1]
CONFIG_DIR = BASE_DIR / "configs"

SCENARIOS = ("NM", "CL", "BG", "WSS", "WSF", "TXT", "PH")
VIEW_ANGLES = (0, 45, 90, 180, 225, 270)


def env_flag(name: str, default: str = "0") -> bool:
    return str(os.getenv(name, default)).lower() in {"1", "true", "yes"}


def env_int(name: str, default: int) -> int:
    try:
        return int(os.getenv(name, str(default)))
    except ValueError:
        return default


@dataclass(frozen=True)
class DataConfig:
    dir: str = "storage/dataset"
    train_subjects: int = 32
    test_subjects: int = 12
    scenarios: Tuple[str, ...] = ("NM", "BG", "CL")
    angles: Tuple[int, ...] = (45, 90, 270)
    runs: int = 2
    frames: int = 60
    noise: float = 0.01
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class ModelConfig:
    channels: Tuple[int, ...] = (16, 32, 64, 128)
    experts: Tuple[int, ...] = (4, 4, 4, 4)
    heads: Tuple[int, ...] = (2, 2, 4, 4)
    depth: int = 1
    mlp_ratio: float = 2.0
    expert_amplifier: float = 1.0
    main_gate_amplifier: float = 1.0
    task_gate_amplifier: float = 0.5
    head_hidden: int = 128
    id_dim: int = 64
    dropout: float = 0.0
    window: int = 30
    embed_bias: bool = False
    tasks: Tuple[str, ...] = ("all",)
    init_seed: int = 0


@dataclass(frozen=True)
class LossConfig:
    task_weight: float = 1.0
    task_weights: Dict[str, float] = field(default_factory=dict)
    load_balance_weight: float = 0.01
    entropy_weight: float = 0.001
    triplet_margin: float = 0.2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    steps_per_epoch: int = 8
    batch_p: int = 8
    batch_s: int = 4
    base_lr: float = 1e-4
    max_lr: float = 9e-4
    step_size: int = 25
    gamma: float = 0.999
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    active_tasks: Tuple[str, ...] = ("all",)
    seed: int = 0
    seeds: Tuple[int, ...] = ()
    checkpoint_every: int = 50

    @property
    def batch_size(self) -> int:
        return self.batch_p * self.batch_s


@dataclass(frozen=True)
class EvalConfig:
    gallery_scenario: str = "NM"
    gallery_runs: int = 1
    batch_size: int = 64
    angle_average: str = "gallery_then_scenario"


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out: str = "runs/default"

    def to_flat(self) -> Dict[str, Any]:
        return to_flat(self)

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        return apply_overrides(self, overrides)

    def validate(self) -> "RunConfig":
        validate(self)
        return self


def _jsonable(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in sorted(value.items())}
    return value


def to_flat(cfg: RunConfig) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if is_dataclass(value):
            for sub in fields(value):
                out[f"{f.name}.{sub.name}"] = _jsonable(getattr(value, sub.name))
        else:
            out[f.name] = _jsonable(value)
    return dict(sorted(out.items()))


def type_of(obj: Any, name: str) -> str:
    for f in fields(obj):
        if f.name == name:
            return str(f.type)
    return ""


def _coerce(key: str, template: Any, value: Any, type_hint: str = "") -> Any:
    try:
        if isinstance(template, bool):
            if isinstance(value, str):
                lowered = value.lower()
                if lowered not in {"1", "0", "true", "false", "yes", "no"}:
                    raise ValueError(value)
                return lowered in {"1", "true", "yes"}
            return bool(value)
        if isinstance(template, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if isinstance(template, float):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if isinstance(template, str):
            return str(value)
        if isinstance(template, tuple):
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            if not isinstance(value, (list, tuple)):
                raise ValueError(value)
            if template:
                kind = type(template[0])
            else:
                kind = int if "int" in type_hint else float if "float" in type_hint else str
            items = list(value)
            if kind in (int, float):
                items = [_coerce(key, kind(0), v) for v in items]
            elif kind is str:
                items = [str(v) for v in items]
            return tuple(items)
        if isinstance(template, dict):
            if not isinstance(value, Mapping):
                raise ValueError(value)
            return {str(k): float(v) for k, v in value.items()}
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key}: cannot use value {value!r}") from None
    return value


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    updates: Dict[str, Dict[str, Any]] = {}
    top: Dict[str, Any] = {}
    unknown = []
    for key, value in overrides.items():
        head, _, tail = key.partition(".")
        if head not in sections:
            unknown.append(key)
            continue
        section = sections[head]
        if not tail:
            if is_dataclass(section):
                unknown.append(key)
            else:
                top[head] = _coerce(key, section, value, type_of(cfg, head))
            continue
        if not is_dataclass(section) or tail not in {f.name for f in fields(section)}:
            unknown.append(key)
            continue
        updates.setdefault(head, {})[tail] = _coerce(key, getattr(section, tail), value, type_of(section, tail))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    new_sections = {name: replace(sections[name], **vals) for name, vals in updates.items()}
    return replace(cfg, **new_sections, **top)


def from_flat(flat: Mapping[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    return apply_overrides(base or RunConfig(), flat)


def load_json(path: str) -> Dict[str, Any]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object of dotted keys")
    return data


def load_preset(name: str) -> Dict[str, Any]:
    path = CONFIG_DIR / f"{name}.json"
    if not path.exists():
        known = sorted(p.stem for p in CONFIG_DIR.glob("*.json"))
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(known)}")
    return load_json(str(path))


def build_config(
    preset: Optional[str] = None,
    config_path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Defaults < preset < config file < explicit overrides."""
    cfg = RunConfig()
    if preset:
        cfg = apply_overrides(cfg, load_preset(preset))
    if config_path:
        cfg = apply_overrides(cfg, load_json(config_path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return validate(cfg)


def validate(cfg: RunConfig) -> RunConfig:
    d, m, lo, t, e = cfg.data, cfg.model, cfg.loss, cfg.train, cfg.eval
    problems = []
    if d.train_subjects + d.test_subjects < 2:
        problems.append("data needs at least 2 subjects")
    if d.train_subjects < 1 or d.test_subjects < 0:
        problems.append("data.train_subjects must be >= 1 and data.test_subjects >= 0")
    if not d.scenarios or any(s not in SCENARIOS for s in d.scenarios):
        problems.append(f"data.scenarios must be a nonempty subset of {SCENARIOS}")
    if not d.angles or any(a not in VIEW_ANGLES for a in d.angles):
        problems.append(f"data.angles must be a nonempty subset of {VIEW_ANGLES}")
    if d.runs < 1 or d.frames < 1 or d.noise < 0 or d.workers < 1:
        problems.append("data.runs, data.frames and data.workers must be >= 1, data.noise >= 0")
    if not (len(m.channels) == len(m.experts) == len(m.heads) == 4):
        problems.append("model.channels, model.experts and model.heads need one entry per stage (4)")
    if any(c < 1 for c in m.channels) or any(k < 1 for k in m.experts) or any(h < 1 for h in m.heads):
        problems.append("model.channels, model.experts and model.heads must be positive")
    if m.window < 1 or m.window > d.frames:
        problems.append(f"model.window must be in [1, data.frames={d.frames}]")
    for name in ("expert_amplifier", "main_gate_amplifier", "task_gate_amplifier", "mlp_ratio"):
        if getattr(m, name) <= 0:
            problems.append(f"model.{name} must be > 0")
    if not 0.0 <= m.dropout < 1.0:
        problems.append("model.dropout must be in [0, 1)")
    weights = [lo.task_weight, lo.load_balance_weight, lo.entropy_weight, *lo.task_weights.values()]
    if any(w < 0 for w in weights):
        problems.append("loss weights must be >= 0")
    if lo.triplet_margin < 0:
        problems.append("loss.triplet_margin must be >= 0")
    if t.base_lr > t.max_lr or t.base_lr < 0:
        problems.append("train.base_lr must satisfy 0 <= base_lr <= max_lr")
    if t.step_size < 1 or t.epochs < 0 or t.steps_per_epoch < 1:
        problems.append("train.step_size and train.steps_per_epoch must be >= 1, train.epochs >= 0")
    if t.batch_p < 1 or t.batch_s < 1:
        problems.append("train.batch_p and train.batch_s must be >= 1")
    if not t.active_tasks:
        problems.append("train.active_tasks must not be empty")
    if e.gallery_runs < 1 or e.batch_size < 1:
        problems.append("eval.gallery_runs and eval.batch_size must be >= 1")
    if e.angle_average not in {"gallery_then_scenario", "pooled"}:
        problems.append("eval.angle_average must be 'gallery_then_scenario' or 'pooled'")
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def canonical_json(payload: Any) -> str:
    return json.dumps(_jsonable(payload), sort_keys=True, separators=(",", ":"))


# fields that change training behaviour but not the parameter layout
_HASH_EXCLUDED = {"init_seed", "dropout"}


def config_hash(model_cfg: ModelConfig, task_names: Iterable[str]) -> str:
    payload = {
        "model": {
            f.name: _jsonable(getattr(model_cfg, f.name))
            for f in fields(model_cfg)
            if f.name not in _HASH_EXCLUDED
        },
        "tasks": list(task_names),
    }
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
