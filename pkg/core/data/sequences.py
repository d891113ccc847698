from __future__ import annotations
from dataclasses import dataclass, replace
from typing import Dict, Optional

import numpy as np

from core.config import SCENARIOS, VIEW_ANGLES
from core.data.skeleton import LEFT_HIP, LEFT_SHOULDER, NUM_JOINTS, RIGHT_HIP, RIGHT_SHOULDER
from core.data.traits import TRAIT_CLASSES, TRAIT_NAMES
from core.errors import DataError, DegeneratePoseError, SequenceTooShortError


@dataclass(frozen=True)
class PoseSequence:
    frames: np.ndarray  # (n, 17, 2)
    subject_id: str
    scenario: str
    view_angle: int
    run: int = 0

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])

    @property
    def key(self):
        return (self.subject_id, self.scenario, self.view_angle, self.run)

    def validate(self, where: str = "") -> "PoseSequence":
        label = where or f"{self.subject_id}/{self.scenario}/{self.view_angle}/{self.run}"
        if self.frames.ndim != 3 or self.frames.shape[2] != 2:
            raise DataError(f"{label}: frames must have shape (n, {NUM_JOINTS}, 2), got {self.frames.shape}")
        if self.frames.shape[1] != NUM_JOINTS:
            raise DataError(f"{label}: expected {NUM_JOINTS} joints, got {self.frames.shape[1]}")
        if self.frames.shape[0] < 1:
            raise DataError(f"{label}: sequence has no frames")
        if not np.all(np.isfinite(self.frames)):
            bad = int(np.argwhere(~np.isfinite(self.frames))[0][0])
            raise DataError(f"{label}: non-finite coordinate in frame {bad}")
        if self.scenario not in SCENARIOS:
            raise DataError(f"{label}: unknown scenario {self.scenario!r}")
        if self.view_angle not in VIEW_ANGLES:
            raise DataError(f"{label}: unknown view angle {self.view_angle}")
        return self


@dataclass(frozen=True)
class LabelRecord:
    traits: Dict[str, int]
    gender: int
    bmi: float
    identity: int

    def trait_vector(self) -> np.ndarray:
        return np.array([self.traits[name] for name in TRAIT_NAMES], dtype=np.int64)

    def validate(self, where: str = "") -> "LabelRecord":
        label = where or f"identity {self.identity}"
        missing = [n for n in TRAIT_NAMES if n not in self.traits]
        if missing:
            raise DataError(f"{label}: missing trait labels {', '.join(missing)}")
        extra = sorted(set(self.traits) - set(TRAIT_NAMES))
        if extra:
            raise DataError(f"{label}: unknown trait labels {', '.join(extra)}")
        for name, value in self.traits.items():
            classes = TRAIT_CLASSES[name]
            if not 0 <= int(value) < classes:
                raise DataError(f"{label}: trait {name} class index {value} out of range for {classes} classes")
        if self.gender not in (0, 1):
            raise DataError(f"{label}: gender must be 0 or 1, got {self.gender}")
        if not (np.isfinite(self.bmi) and self.bmi > 0):
            raise DataError(f"{label}: bmi must be a positive real, got {self.bmi}")
        if self.identity < 0:
            raise DataError(f"{label}: identity must be >= 0")
        return self

    def to_dict(self) -> Dict:
        return {
            "traits": {n: int(self.traits[n]) for n in TRAIT_NAMES},
            "gender": int(self.gender),
            "bmi": float(self.bmi),
            "identity": int(self.identity),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "LabelRecord":
        try:
            return cls(
                traits={str(k): int(v) for k, v in data["traits"].items()},
                gender=int(data["gender"]),
                bmi=float(data["bmi"]),
                identity=int(data["identity"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed label record: {e}") from None


def hip_midpoints(frames: np.ndarray) -> np.ndarray:
    return 0.5 * (frames[:, LEFT_HIP] + frames[:, RIGHT_HIP])


def torso_lengths(frames: np.ndarray) -> np.ndarray:
    shoulders = 0.5 * (frames[:, LEFT_SHOULDER] + frames[:, RIGHT_SHOULDER])
    return np.linalg.norm(shoulders - hip_midpoints(frames), axis=-1)


def normalize_sequence(seq: PoseSequence) -> PoseSequence:
    """Translate each frame's hip midpoint to the origin, divide by the mean torso length."""
    frames = np.asarray(seq.frames, dtype=np.float64)
    torso = torso_lengths(frames)
    degenerate = np.flatnonzero(~(torso > 0))
    if degenerate.size:
        raise DegeneratePoseError(
            f"{seq.subject_id}/{seq.scenario}/{seq.view_angle}/{seq.run}: "
            f"zero torso length in frame {int(degenerate[0])}"
        )
    centered = frames - hip_midpoints(frames)[:, None, :]
    return replace(seq, frames=centered / torso.mean())


def window_start(length: int, window: int, rng: Optional[np.random.Generator] = None) -> int:
    if length < window:
        raise SequenceTooShortError(f"sequence has {length} frames, window needs {window}")
    if rng is None:
        return (length - window) // 2
    return int(rng.integers(0, length - window + 1))


def window_sequence(
    seq: PoseSequence,
    length: int,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> PoseSequence:
    """
    Contiguous `length`-frame window. With a seed (or generator) the start is drawn
    uniformly; without one the center window is used (evaluation).
    """
    if rng is None and seed is not None:
        rng = np.random.default_rng(seed)
    try:
        start = window_start(seq.length, length, rng)
    except SequenceTooShortError as e:
        raise SequenceTooShortError(
            f"{seq.subject_id}/{seq.scenario}/{seq.view_angle}/{seq.run}: {e}"
        ) from None
    return replace(seq, frames=seq.frames[start:start + length])

