"""COCO-17 joint layout and the joint -> limb -> limb group -> body hierarchy."""
from __future__ import annotations
from dataclasses import dataclass
from typing import FrozenSet, Sequence, Tuple

from core.errors import ConfigError

NUM_JOINTS = 17

JOINT_NAMES: Tuple[str, ...] = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

LEFT_SHOULDER, RIGHT_SHOULDER = 5, 6
LEFT_HIP, RIGHT_HIP = 11, 12


@dataclass(frozen=True)
class StageSpec:
    index: int
    group_names: Tuple[str, ...]
    groups: Tuple[Tuple[int, ...], ...]  # indices into the previous stage's units
    channels: int

    @property
    def units(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class SkeletonHierarchy:
    stages: Tuple[StageSpec, ...]

    @property
    def unit_counts(self) -> Tuple[int, ...]:
        return tuple(s.units for s in self.stages)

    @property
    def channels(self) -> Tuple[int, ...]:
        return tuple(s.channels for s in self.stages)

    def input_units(self, stage: int) -> int:
        """j_{s-1}: units entering stage `stage` (1-based); stage 1 sees the joints."""
        return NUM_JOINTS if stage == 1 else self.stages[stage - 2].units

    def input_channels(self, stage: int) -> int:
        """c_{s-1}; the embedding lifts joints to c_1, so stage 1 also enters at c_1."""
        return self.stages[0].channels if stage == 1 else self.stages[stage - 2].channels

    def joints_of(self, stage: int, unit: int) -> FrozenSet[int]:
        """Joint indices covered by `unit` of `stage` (1-based stage)."""
        members = {unit}
        for s in range(stage, 0, -1):
            spec = self.stages[s - 1]
            members = {m for u in members for m in spec.groups[u]}
        return frozenset(members)

    def unit_index(self, stage: int, name: str) -> int:
        try:
            return self.stages[stage - 1].group_names.index(name)
        except ValueError:
            raise KeyError(f"stage {stage} has no unit {name!r}") from None

    def validate(self) -> "SkeletonHierarchy":
        previous = NUM_JOINTS
        for spec in self.stages:
            flat = [u for g in spec.groups for u in g]
            if sorted(flat) != list(range(previous)):
                raise ConfigError(
                    f"stage {spec.index} groups must partition {previous} units exactly once"
                )
            if any(len(g) == 0 for g in spec.groups):
                raise ConfigError(f"stage {spec.index} has an empty group")
            previous = spec.units
        counts = self.unit_counts
        if counts[0] != NUM_JOINTS or counts[-1] != 1:
            raise ConfigError(f"hierarchy must start at {NUM_JOINTS} units and end at 1, got {counts}")
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise ConfigError(f"unit counts must strictly decrease, got {counts}")
        chans = self.channels
        if any(b < a for a, b in zip(chans, chans[1:])):
            raise ConfigError(f"channel widths must not decrease across stages, got {chans}")
        return self


def stage_partition(channels: Sequence[int] = (16, 32, 64, 128)) -> SkeletonHierarchy:
    if len(channels) != 4:
        raise ConfigError(f"need 4 channel widths, got {tuple(channels)}")
    joints = StageSpec(1, JOINT_NAMES, tuple((j,) for j in range(NUM_JOINTS)), int(channels[0]))
    limbs = StageSpec(
        2,
        ("head", "left_arm", "right_arm", "left_leg", "right_leg"),
        ((0, 1, 2, 3, 4), (5, 7, 9), (6, 8, 10), (11, 13, 15), (12, 14, 16)),
        int(channels[1]),
    )
    limb_groups = StageSpec(3, ("upper", "lower"), ((0, 1, 2), (3, 4)), int(channels[2]))
    body = StageSpec(4, ("body",), ((0, 1),), int(channels[3]))
    return SkeletonHierarchy((joints, limbs, limb_groups, body)).validate()
