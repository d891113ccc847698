from __future__ import annotations
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

from core.data.traits import TRAITS
from core.errors import ConfigError

CLASSIFICATION = "classification"
REGRESSION = "regression"
EMBEDDING = "embedding"

GENDER = "gender"
BMI = "bmi"
IDENTITY = "identity"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str
    out_dim: int
    loss: str
    group: str

    @property
    def num_classes(self) -> int:
        return self.out_dim if self.kind == CLASSIFICATION else 0

    def to_dict(self) -> Dict:
        return {"name": self.name, "kind": self.kind, "out_dim": self.out_dim, "loss": self.loss, "group": self.group}

    @classmethod
    def from_dict(cls, d: Dict) -> "TaskSpec":
        return cls(str(d["name"]), str(d["kind"]), int(d["out_dim"]), str(d["loss"]), str(d["group"]))


def default_task_roster(id_dim: int = 64) -> Tuple[TaskSpec, ...]:
    """17 traits, gender, BMI and the identity embedding, in that order."""
    roster = [TaskSpec(t.name, CLASSIFICATION, t.num_classes, "cross_entropy", "traits") for t in TRAITS]
    roster.append(TaskSpec(GENDER, CLASSIFICATION, 2, "cross_entropy", "gender"))
    roster.append(TaskSpec(BMI, REGRESSION, 1, "mse", "bmi"))
    roster.append(TaskSpec(IDENTITY, EMBEDDING, id_dim, "triplet", "identity"))
    return tuple(roster)


# CLI shorthands for mask rows
GROUP_ALIASES = {"id": "identity", "trait": "traits", "sex": "gender"}


def resolve_tasks(selection: Iterable[str], roster: Sequence[TaskSpec]) -> List[TaskSpec]:
    """
    Expand names and groups ("all", "traits", "gender", "bmi", "identity") against
    `roster`; the result keeps roster order.
    """
    wanted = set()
    unknown = []
    by_group: Dict[str, List[str]] = {}
    for t in roster:
        by_group.setdefault(t.group, []).append(t.name)
    names = {t.name for t in roster}
    for raw in selection:
        for token in str(raw).replace("+", ",").split(","):
            token = token.strip().lower()
            if not token:
                continue
            token = GROUP_ALIASES.get(token, token)
            if token == "all":
                wanted |= names
            elif token in by_group:
                wanted |= set(by_group[token])
            elif token in names:
                wanted.add(token)
            else:
                unknown.append(token)
    if unknown:
        raise ConfigError(f"unknown tasks {', '.join(sorted(unknown))}; roster has {', '.join(sorted(names))}")
    if not wanted:
        raise ConfigError("task selection is empty")
    return [t for t in roster if t.name in wanted]


def roster_for(model_tasks: Iterable[str], id_dim: int) -> Tuple[TaskSpec, ...]:
    return tuple(resolve_tasks(model_tasks, default_task_roster(id_dim)))
