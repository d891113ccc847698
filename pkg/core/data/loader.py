from __future__ import annotations
import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from core.data.sequences import LabelRecord, PoseSequence, normalize_sequence
from core.data.skeleton import NUM_JOINTS
from core.errors import DataError, join_names
from core.utils.file_utils import csv_text, read_json, write_json, write_text

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SEQUENCE_HEADER = ("frame", "joint", "x", "y")


@dataclass(frozen=True)
class SequenceRecord:
    path: str  # relative to the manifest's directory
    subject_id: str
    scenario: str
    view_angle: int
    run: int
    labels: LabelRecord

    @property
    def key(self) -> Tuple[str, str, int, int]:
        return (self.subject_id, self.scenario, self.view_angle, self.run)

    def to_dict(self) -> Dict:
        return {
            "path": self.path,
            "subject_id": self.subject_id,
            "scenario": self.scenario,
            "view_angle": int(self.view_angle),
            "run": int(self.run),
            "labels": self.labels.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SequenceRecord":
        try:
            return cls(
                path=str(data["path"]),
                subject_id=str(data["subject_id"]),
                scenario=str(data["scenario"]),
                view_angle=int(data["view_angle"]),
                run=int(data.get("run", 0)),
                labels=LabelRecord.from_dict(data["labels"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed manifest record {data.get('path', '?')}: {e}") from None


@dataclass
class DatasetManifest:
    records: List[SequenceRecord]
    split: str
    seed: Optional[int] = None
    root: str = ""

    def subjects(self) -> List[str]:
        return sorted({r.subject_id for r in self.records})

    def to_dict(self) -> Dict:
        return {
            "version": MANIFEST_VERSION,
            "split": self.split,
            "seed": self.seed,
            "records": [r.to_dict() for r in self.records],
        }


class Dataset:
    """Manifest plus the sequences it references, order-stable by (subject, scenario, angle, run)."""

    def __init__(self, manifest: DatasetManifest, sequences: List[PoseSequence]):
        if len(manifest.records) != len(sequences):
            raise DataError("manifest and sequence counts differ")
        order = sorted(range(len(sequences)), key=lambda i: manifest.records[i].key)
        self.manifest = DatasetManifest(
            records=[manifest.records[i] for i in order],
            split=manifest.split,
            seed=manifest.seed,
            root=manifest.root,
        )
        self.sequences = [sequences[i] for i in order]
        self._normalized: Dict[int, PoseSequence] = {}

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def split(self) -> str:
        return self.manifest.split

    @property
    def records(self) -> List[SequenceRecord]:
        return self.manifest.records

    def labels(self, i: int) -> LabelRecord:
        return self.manifest.records[i].labels

    def subjects(self) -> List[str]:
        return self.manifest.subjects()

    def indices_by_subject(self) -> Dict[str, List[int]]:
        out: Dict[str, List[int]] = {}
        for i, rec in enumerate(self.manifest.records):
            out.setdefault(rec.subject_id, []).append(i)
        return out

    def normalized(self, i: int) -> PoseSequence:
        seq = self._normalized.get(i)
        if seq is None:
            seq = normalize_sequence(self.sequences[i])
            self._normalized[i] = seq
        return seq

    def bmi_values(self) -> np.ndarray:
        return np.array([r.labels.bmi for r in self.manifest.records], dtype=np.float64)

    def subset(self, indices: Iterable[int], split: Optional[str] = None) -> "Dataset":
        idx = list(indices)
        manifest = DatasetManifest(
            records=[self.manifest.records[i] for i in idx],
            split=split or self.split,
            seed=self.manifest.seed,
            root=self.manifest.root,
        )
        return Dataset(manifest, [self.sequences[i] for i in idx])


def check_split_disjoint(train: Dataset, test: Dataset) -> None:
    shared = sorted(set(train.subjects()) & set(test.subjects()))
    if shared:
        raise DataError(f"subjects appear in both train and test splits: {join_names(shared)}")


def sequence_to_csv(frames: np.ndarray) -> str:
    n, j, _ = frames.shape
    rows = ((f, k, float(frames[f, k, 0]), float(frames[f, k, 1])) for f in range(n) for k in range(j))
    return csv_text(SEQUENCE_HEADER, rows)


def read_sequence_csv(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"{path}: sequence file not found")
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = [row for row in csv.reader(f, skipinitialspace=True) if any(cell.strip() for cell in row)]
    if not rows or tuple(h.strip() for h in rows[0]) != SEQUENCE_HEADER:
        raise DataError(f"{path}: header must be {','.join(SEQUENCE_HEADER)}")
    body = rows[1:]
    ragged = next((i for i, row in enumerate(body, start=1) if len(row) != len(SEQUENCE_HEADER)), None)
    if not body or ragged is not None:
        raise DataError(f"{path}: expected rows of frame,joint,x,y" + (f" (data row {ragged})" if ragged else ""))
    try:
        table = np.array([[float(v) for v in row] for row in body], dtype=np.float64)
    except ValueError as e:
        raise DataError(f"{path}: unparsable value ({e})") from None
    frame_idx, joint_idx = table[:, 0].astype(np.int64), table[:, 1].astype(np.int64)
    joints = np.unique(joint_idx)
    if len(joints) != NUM_JOINTS or joints[0] != 0 or joints[-1] != NUM_JOINTS - 1:
        raise DataError(f"{path}: expected {NUM_JOINTS} joints, found {len(joints)}")
    n = int(frame_idx.max()) + 1
    if frame_idx.min() < 0 or len(table) != n * NUM_JOINTS:
        raise DataError(f"{path}: expected {n} x {NUM_JOINTS} rows, found {len(table)}")
    frames = np.full((n, NUM_JOINTS, 2), np.nan)
    frames[frame_idx, joint_idx] = table[:, 2:4]
    if not np.all(np.isfinite(frames)):
        bad = int(np.argwhere(~np.isfinite(frames))[0][0])
        raise DataError(f"{path}: NaN or missing coordinate in frame {bad}")
    return frames


def _load_one(root: str, rec: SequenceRecord) -> PoseSequence:
    path = os.path.join(root, rec.path)
    rec.labels.validate(where=rec.path)
    frames = read_sequence_csv(path)
    seq = PoseSequence(frames, rec.subject_id, rec.scenario, rec.view_angle, rec.run)
    return seq.validate(where=rec.path)


def load_dataset(manifest_path: str, workers: int = 1) -> Dataset:
    if not os.path.exists(manifest_path):
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        raw = read_json(manifest_path)
    except ValueError as e:
        raise DataError(f"{manifest_path}: not valid JSON ({e})") from None
    if not isinstance(raw, dict) or "records" not in raw:
        raise DataError(f"{manifest_path}: missing 'records'")
    root = os.path.dirname(os.path.abspath(manifest_path))
    manifest = DatasetManifest(
        records=[SequenceRecord.from_dict(r) for r in raw["records"]],
        split=str(raw.get("split", "train")),
        seed=raw.get("seed"),
        root=root,
    )
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sequences = list(pool.map(lambda r: _load_one(root, r), manifest.records))
    else:
        sequences = [_load_one(root, r) for r in manifest.records]
    logger.info("[data] loaded %d sequences (%d subjects) from %s", len(sequences), len(manifest.subjects()), manifest_path)
    return Dataset(manifest, sequences)


def write_dataset(dataset: Dataset, out_dir: str, manifest_name: Optional[str] = None) -> str:
    """Write every sequence as CSV plus a JSON manifest; returns the manifest path."""
    name = manifest_name or f"manifest_{dataset.split}.json"
    for rec, seq in zip(dataset.records, dataset.sequences):
        write_text(os.path.join(out_dir, rec.path), sequence_to_csv(seq.frames))
    manifest_path = os.path.join(out_dir, name)
    write_json(manifest_path, dataset.manifest.to_dict())
    return manifest_path
