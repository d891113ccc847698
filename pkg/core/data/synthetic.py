"""
Procedural walking figures with planted labels.

Every subject draws a vector of standard-normal gait latents. Trait labels are
equal-probability quantizations of one or two of those latents, so a model that
recovers the latents from the pose stream can recover the labels.
"""
from __future__ import annotations
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from core.config import SCENARIOS, VIEW_ANGLES, DataConfig
from core.data.loader import Dataset, DatasetManifest, SequenceRecord, write_dataset
from core.data.sequences import LabelRecord, PoseSequence
from core.data.skeleton import NUM_JOINTS
from core.data.traits import TRAIT_CLASSES, TRAIT_NAMES
from core.errors import ConfigError
from core.utils.file_utils import write_json

logger = logging.getLogger(__name__)

PLANTED_VERSION = "planted-v1"
FPS = 25.0

LATENT_NAMES: Tuple[str, ...] = (
    "stride_freq", "arm_swing", "torso_lean", "step_width", "walk_speed",
    "leg_ratio", "arm_ratio", "hip_width", "knee_lift", "head_bob",
)

# trait -> ((latent, sign), ...); the label is the quantized normalized sum
PLANTED_TRAIT_MAP: Dict[str, Tuple[Tuple[str, int], ...]] = {
    "bfi_openness": (("arm_swing", 1),),
    "bfi_conscientiousness": (("torso_lean", -1),),
    "bfi_extraversion": (("walk_speed", 1), ("arm_swing", 1)),
    "bfi_agreeableness": (("head_bob", 1),),
    "bfi_neuroticism": (("step_width", 1), ("knee_lift", -1)),
    "rse_esteem": (("torso_lean", -1), ("walk_speed", 1)),
    "bpaq_physical": (("stride_freq", 1),),
    "bpaq_verbal": (("head_bob", 1), ("stride_freq", 1)),
    "bpaq_anger": (("knee_lift", 1),),
    "bpaq_hostility": (("step_width", 1),),
    "ofer_chronic": (("walk_speed", -1),),
    "ofer_acute": (("stride_freq", -1), ("knee_lift", -1)),
    "ofer_recovery": (("arm_swing", 1), ("knee_lift", 1)),
    "dass_depression": (("torso_lean", 1), ("walk_speed", -1)),
    "dass_anxiety": (("stride_freq", 1), ("step_width", -1)),
    "dass_stress": (("head_bob", -1), ("arm_swing", 1)),
    "ghq": (("leg_ratio", 1),),
}

GENDER_LEG_SHIFT = 0.8
GENDER_LEG_STD = 0.6
RUN_JITTER = 0.15
BMI_RANGE = (16.0, 40.0)


@dataclass(frozen=True)
class GeneratorSpec:
    train_subjects: int = 32
    test_subjects: int = 12
    scenarios: Tuple[str, ...] = ("NM", "BG", "CL")
    angles: Tuple[int, ...] = (45, 90, 270)
    runs: int = 2
    frames: int = 60
    noise: float = 0.01
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_config(cls, data: DataConfig) -> "GeneratorSpec":
        return cls(
            train_subjects=data.train_subjects,
            test_subjects=data.test_subjects,
            scenarios=tuple(data.scenarios),
            angles=tuple(int(a) for a in data.angles),
            runs=data.runs,
            frames=data.frames,
            noise=data.noise,
            seed=data.seed,
            workers=data.workers,
        )

    @property
    def subjects(self) -> int:
        return self.train_subjects + self.test_subjects

    def validate(self) -> "GeneratorSpec":
        if self.subjects < 2:
            raise ConfigError(f"generator needs at least 2 subjects, got {self.subjects}")
        if self.train_subjects < 1 or self.test_subjects < 0:
            raise ConfigError("generator needs >= 1 train subject and >= 0 test subjects")
        if not self.scenarios or any(s not in SCENARIOS for s in self.scenarios):
            raise ConfigError(f"generator scenarios must be a nonempty subset of {SCENARIOS}")
        if not self.angles or any(a not in VIEW_ANGLES for a in self.angles):
            raise ConfigError(f"generator angles must be a nonempty subset of {VIEW_ANGLES}")
        if self.runs < 1 or self.frames < 1:
            raise ConfigError("generator runs and frames must be >= 1")
        if self.noise < 0:
            raise ConfigError("generator noise must be >= 0")
        return self

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["scenarios"] = list(self.scenarios)
        d["angles"] = list(self.angles)
        d.pop("workers")
        return d


@dataclass(frozen=True)
class SubjectDraw:
    subject_id: str
    index: int
    latents: Dict[str, float]
    labels: LabelRecord


@dataclass
class GeneratedData:
    train: Dataset
    test: Dataset
    subjects: List[SubjectDraw]
    spec: GeneratorSpec

    def provenance(self) -> Dict:
        return {
            "generator": PLANTED_VERSION,
            "spec": self.spec.to_dict(),
            "latents": list(LATENT_NAMES),
            "trait_map": {t: [[n, s] for n, s in v] for t, v in PLANTED_TRAIT_MAP.items()},
            "bmi": "22 + 3.5*step_width + 3.0*hip_width + N(0,1), clipped to [16, 40]",
            "gender": f"leg_ratio ~ N(+-{GENDER_LEG_SHIFT}, {GENDER_LEG_STD}), arm_ratio opposite",
            "train_subjects": self.train.subjects(),
            "test_subjects": self.test.subjects(),
        }


def quantize_score(score: float, num_classes: int) -> int:
    """Equal-probability bins of a standard normal score."""
    edges = norm.ppf(np.arange(1, num_classes) / num_classes)
    return int(np.searchsorted(edges, score, side="right"))


def planted_labels(latents: Dict[str, float], gender: int, bmi_noise: float, identity: int) -> LabelRecord:
    traits = {}
    for name in TRAIT_NAMES:
        terms = PLANTED_TRAIT_MAP[name]
        score = sum(sign * latents[latent] for latent, sign in terms) / math.sqrt(len(terms))
        traits[name] = quantize_score(score, TRAIT_CLASSES[name])
    bmi = 22.0 + 3.5 * latents["step_width"] + 3.0 * latents["hip_width"] + bmi_noise
    bmi = float(np.clip(bmi, *BMI_RANGE))
    return LabelRecord(traits=traits, gender=int(gender), bmi=bmi, identity=int(identity))


def draw_subject(seed: int, index: int) -> SubjectDraw:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    z = rng.standard_normal(len(LATENT_NAMES))
    latents = dict(zip(LATENT_NAMES, (float(v) for v in z)))
    gender = int(rng.random() < 0.5)
    shift = GENDER_LEG_SHIFT if gender == 1 else -GENDER_LEG_SHIFT
    latents["leg_ratio"] = float(shift + GENDER_LEG_STD * z[LATENT_NAMES.index("leg_ratio")])
    latents["arm_ratio"] = float(-shift + GENDER_LEG_STD * z[LATENT_NAMES.index("arm_ratio")])
    labels = planted_labels(latents, gender, float(rng.standard_normal()), index)
    return SubjectDraw(subject_id=f"S{index:04d}", index=index, latents=latents, labels=labels)


def _segment(origin: np.ndarray, length: float, angle: np.ndarray, lateral: float = 0.0) -> np.ndarray:
    """Endpoint of a limb swinging in the sagittal plane; angle 0 points straight down."""
    out = np.empty_like(origin)
    out[:, 0] = origin[:, 0] + length * np.sin(angle)
    out[:, 1] = origin[:, 1] - length * np.cos(angle)
    out[:, 2] = origin[:, 2] + lateral
    return out


def walking_figure(latents: Dict[str, float], scenario: str, frames: int, phase0: float) -> np.ndarray:
    """3D joints (frames, 17, 3): x forward, y up, z lateral (left positive)."""
    z = latents
    freq = 0.95 * (1.0 + 0.12 * z["stride_freq"])
    speed = 1.2 * (1.0 + 0.15 * z["walk_speed"])
    arm_amp = max(0.02, 0.35 * (1.0 + 0.3 * z["arm_swing"]))
    leg_amp = max(0.05, 0.32 * (1.0 + 0.2 * z["walk_speed"]))
    knee_amp = max(0.05, 0.5 * (1.0 + 0.3 * z["knee_lift"]))
    bob_amp = max(0.0, 0.025 * (1.0 + 0.4 * z["head_bob"]))
    lean = 0.06 + 0.05 * z["torso_lean"]
    step_w = 0.04 * z["step_width"]
    leg_len = 0.45 * (1.0 + 0.06 * z["leg_ratio"])
    arm_len = 0.30 * (1.0 + 0.06 * z["arm_ratio"])
    hip_w = 0.17 * (1.0 + 0.12 * z["hip_width"])
    torso = 0.52
    shoulder_w = 0.36

    if scenario == "WSS":
        freq, speed = 0.8 * freq, 0.7 * speed
    elif scenario == "WSF":
        freq, speed = 1.25 * freq, 1.3 * speed
    elif scenario == "CL":
        arm_amp *= 0.6

    t = np.arange(frames) / FPS
    phase = 2.0 * np.pi * freq * t + phase0
    J = np.zeros((frames, NUM_JOINTS, 3))

    pelvis = np.stack([speed * t, 2 * leg_len + bob_amp * np.cos(2 * phase), np.zeros(frames)], axis=1)
    for side, sign, off in ((11, 1.0, 0.0), (12, -1.0, np.pi)):
        hip = pelvis + np.array([0.0, 0.0, sign * hip_w / 2])
        thigh = leg_amp * np.sin(phase + off)
        flex = knee_amp * 0.5 * (1.0 + np.sin(phase + off + np.pi / 2))
        knee = _segment(hip, leg_len, thigh, sign * step_w / 2)
        ankle = _segment(knee, leg_len, thigh - flex, sign * step_w / 2)
        J[:, side], J[:, side + 2], J[:, side + 4] = hip, knee, ankle

    neck = pelvis + np.stack([np.full(frames, torso * np.sin(lean)), np.full(frames, torso * np.cos(lean)), np.zeros(frames)], axis=1)
    for side, sign, off in ((5, 1.0, np.pi), (6, -1.0, 0.0)):
        shoulder = neck + np.array([0.0, 0.0, sign * shoulder_w / 2])
        swing = arm_amp * np.sin(phase + off)
        if scenario == "BG" and side == 5:
            swing = 0.15 * swing + 0.1
        elbow = _segment(shoulder, arm_len, swing)
        wrist = _segment(elbow, arm_len * 0.9, swing + 0.3)
        if scenario == "TXT":
            elbow = shoulder + np.array([0.12, -0.25, -sign * 0.02])
            wrist = shoulder + np.array([0.3, -0.12, -sign * 0.12])
        elif scenario == "PH" and side == 6:
            elbow = shoulder + np.array([0.1, -0.2, 0.02])
            wrist = neck + np.array([0.0, 0.17, -0.09])
        J[:, side], J[:, side + 2], J[:, side + 4] = shoulder, elbow, wrist

    tilt = -0.08 if scenario == "TXT" else 0.0
    head = neck + np.array([0.04, 0.2 + tilt, 0.0])
    J[:, 0] = head + np.array([0.08, 0.0, 0.0])
    J[:, 1] = head + np.array([0.06, 0.03, 0.03])
    J[:, 2] = head + np.array([0.06, 0.03, -0.03])
    J[:, 3] = head + np.array([-0.01, 0.01, 0.07])
    J[:, 4] = head + np.array([-0.01, 0.01, -0.07])
    return J


def project(joints3d: np.ndarray, view_angle: int) -> np.ndarray:
    """Orthographic camera; 90 degrees sees the walker from the side, 0 from the front."""
    theta = math.radians(view_angle)
    u = joints3d[..., 0] * math.sin(theta) + joints3d[..., 2] * math.cos(theta)
    v = -joints3d[..., 1]
    return np.stack([u, v], axis=-1)


def render_run(spec: GeneratorSpec, draw: SubjectDraw, scenario: str, angle: int, run: int) -> PoseSequence:
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, draw.index, SCENARIOS.index(scenario), int(angle), run, 1])
    )
    jitter = rng.normal(0.0, RUN_JITTER, len(LATENT_NAMES))
    latents = {n: draw.latents[n] + float(j) for n, j in zip(LATENT_NAMES, jitter)}
    joints = walking_figure(latents, scenario, spec.frames, phase0=float(rng.uniform(0, 2 * np.pi)))
    scale = float(rng.uniform(80.0, 120.0))
    offset = rng.uniform(100.0, 400.0, size=2)
    pixels = project(joints, angle) * scale + offset
    sigma = np.full(NUM_JOINTS, spec.noise * scale)
    if scenario == "CL":
        sigma[:11] *= 3.0
    pixels = pixels + rng.standard_normal(pixels.shape) * sigma[None, :, None]
    return PoseSequence(pixels, draw.subject_id, scenario, int(angle), run)


def sequence_path(subject_id: str, scenario: str, angle: int, run: int) -> str:
    return f"sequences/{subject_id}/{subject_id}_{scenario}_{angle:03d}_{run:02d}.csv"


def _subject_records(spec: GeneratorSpec, draw: SubjectDraw) -> List[Tuple[SequenceRecord, PoseSequence]]:
    out = []
    for scenario in spec.scenarios:
        for angle in spec.angles:
            for run in range(spec.runs):
                seq = render_run(spec, draw, scenario, angle, run)
                rec = SequenceRecord(
                    path=sequence_path(draw.subject_id, scenario, angle, run),
                    subject_id=draw.subject_id,
                    scenario=scenario,
                    view_angle=int(angle),
                    run=run,
                    labels=draw.labels,
                )
                out.append((rec, seq))
    return out


def _build_split(spec: GeneratorSpec, draws: Sequence[SubjectDraw], split: str) -> Dataset:
    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(pool.map(lambda d: _subject_records(spec, d), draws))
    else:
        chunks = [_subject_records(spec, d) for d in draws]
    pairs = [p for chunk in chunks for p in chunk]
    manifest = DatasetManifest(records=[r for r, _ in pairs], split=split, seed=spec.seed)
    return Dataset(manifest, [s for _, s in pairs])


def generate_synthetic_dataset(spec: GeneratorSpec) -> GeneratedData:
    spec.validate()
    draws = [draw_subject(spec.seed, i) for i in range(spec.subjects)]
    train = _build_split(spec, draws[:spec.train_subjects], "train")
    test = _build_split(spec, draws[spec.train_subjects:], "test")
    logger.info(
        "[generator] %d train + %d test subjects, %d + %d sequences (seed=%d)",
        spec.train_subjects, spec.test_subjects, len(train), len(test), spec.seed,
    )
    return GeneratedData(train=train, test=test, subjects=draws, spec=spec)


def write_generated(data: GeneratedData, out_dir: str) -> Dict[str, str]:
    paths = {
        "train": write_dataset(data.train, out_dir, "manifest_train.json"),
        "test": write_dataset(data.test, out_dir, "manifest_test.json"),
        "provenance": write_json(os.path.join(out_dir, "provenance.json"), data.provenance()),
    }
    return paths
