from __future__ import annotations
import io
import json
import logging
import os
import zipfile
from dataclasses import fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.config import ModelConfig, RunConfig, apply_overrides
from core.errors import CheckpointError, MomeError
from core.models.mome import MoMEModel
from core.models.tasks import TaskSpec
from core.utils.file_utils import ensure_parent, sha256_bytes

logger = logging.getLogger(__name__)

META_KEY = "__meta__"
FORMAT_VERSION = 1
# fixed member timestamp so identical parameters give identical bytes
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _array_bytes(arr: np.ndarray, dtype=np.float64) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype=dtype), allow_pickle=False)
    return buf.getvalue()


def _model_meta(model: MoMEModel) -> Dict:
    h = model.hierarchy
    return {
        "config": {f"model.{f.name}": _plain(getattr(model.cfg, f.name)) for f in fields(model.cfg)},
        "hierarchy": [
            {"stage": s.index, "units": list(s.group_names), "groups": [list(g) for g in s.groups], "channels": s.channels}
            for s in h.stages
        ],
        "roster": [t.to_dict() for t in model.roster],
        "config_hash": model.config_hash,
    }


def _plain(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def save_checkpoint(
    model: MoMEModel,
    path: str,
    epoch: Optional[int] = None,
    bmi_stats: Optional[Dict[str, float]] = None,
    extra: Optional[Dict] = None,
) -> str:
    """Write every parameter plus a JSON metadata member into one .npz container."""
    ensure_parent(path)
    meta = _model_meta(model)
    meta.update({"version": FORMAT_VERSION, "epoch": epoch, "bmi": bmi_stats, "extra": extra or {}, "tensors": {}})
    members: List[Tuple[str, bytes]] = []
    for name, p in model.named_parameters():
        blob = _array_bytes(p.data)
        members.append((name + ".npy", blob))
        meta["tensors"][name] = {"shape": list(p.shape), "sha256": sha256_bytes(blob)}
    meta_blob = _array_bytes(np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8), np.uint8)
    tmp = path + ".tmp"
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, blob in [(META_KEY + ".npy", meta_blob)] + members:
            zf.writestr(zipfile.ZipInfo(name, date_time=_ZIP_DATE), blob)
    os.replace(tmp, path)
    logger.info("[checkpoint] saved %d tensors to %s", len(members), path)
    return path


def _read_member(zf: zipfile.ZipFile, member: str, path: str) -> Tuple[np.ndarray, bytes]:
    try:
        blob = zf.read(member)
        arr = np.lib.format.read_array(io.BytesIO(blob), allow_pickle=False)
    except KeyError:
        raise CheckpointError(f"{path}: tensor {member[:-4]} missing") from None
    except (zipfile.BadZipFile, ValueError, EOFError, OSError) as e:
        raise CheckpointError(f"{path}: tensor {member[:-4]} is corrupt ({e})") from None
    return arr, blob


def read_checkpoint(path: str) -> Tuple[Dict, Dict[str, np.ndarray]]:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(path, "r")
    except (zipfile.BadZipFile, OSError) as e:
        raise CheckpointError(f"{path}: not a readable checkpoint, file truncated or corrupt ({e})") from None
    with zf:
        meta_arr, _ = _read_member(zf, META_KEY + ".npy", path)
        try:
            meta = json.loads(meta_arr.astype(np.uint8).tobytes().decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as e:
            raise CheckpointError(f"{path}: metadata is corrupt ({e})") from None
        tensors: Dict[str, np.ndarray] = {}
        for name, info in meta.get("tensors", {}).items():
            arr, blob = _read_member(zf, name + ".npy", path)
            if sha256_bytes(blob) != info.get("sha256"):
                raise CheckpointError(f"{path}: tensor {name} failed its checksum")
            tensors[name] = arr
    return meta, tensors


def model_config_from_meta(meta: Dict) -> ModelConfig:
    try:
        return apply_overrides(RunConfig(), meta["config"]).model
    except (KeyError, MomeError) as e:
        raise CheckpointError(f"checkpoint metadata has no usable model config ({e})") from None


def load_checkpoint(path: str, model: Optional[MoMEModel] = None) -> Tuple[MoMEModel, Dict]:
    """
    Restore parameters into `model` (or a model rebuilt from the stored config).
    A model whose config hash differs from the stored one is refused.
    """
    meta, tensors = read_checkpoint(path)
    if model is None:
        roster = [TaskSpec.from_dict(t) for t in meta.get("roster", [])]
        model = MoMEModel(model_config_from_meta(meta), roster=roster or None)
    stored = meta.get("config_hash")
    if stored != model.config_hash:
        raise CheckpointError(
            f"{path}: config hash {str(stored)[:12]} does not match the current model ({model.config_hash[:12]}); "
            "the checkpoint was trained with a different architecture or task roster"
        )
    model.load_state_dict(tensors)
    return model, meta


def checkpoint_roundtrip(model: MoMEModel, path: str) -> MoMEModel:
    save_checkpoint(model, path)
    restored, _ = load_checkpoint(path)
    return restored


class CheckpointManager:
    """Epoch-numbered checkpoints under one directory."""

    def __init__(self, directory: str = "storage/checkpoints"):
        self.directory = directory
        os.makedirs(self.directory, exist_ok=True)
        self.logger = logging.getLogger(__name__)
        self.last_good: Optional[str] = None

    def path_for(self, epoch: int) -> str:
        return os.path.join(self.directory, f"checkpoint_epoch_{epoch:04d}.npz")

    def save(self, model: MoMEModel, epoch: int, bmi_stats: Optional[Dict[str, float]] = None, extra: Optional[Dict] = None) -> str:
        path = save_checkpoint(model, self.path_for(epoch), epoch=epoch, bmi_stats=bmi_stats, extra=extra)
        self.last_good = path
        return path

    def list(self) -> List[str]:
        names = sorted(n for n in os.listdir(self.directory) if n.startswith("checkpoint_epoch_") and n.endswith(".npz"))
        return [os.path.join(self.directory, n) for n in names]

    def latest(self) -> Optional[str]:
        items = self.list()
        return items[-1] if items else None

    def load(self, path: Optional[str] = None, model: Optional[MoMEModel] = None) -> Tuple[MoMEModel, Dict]:
        target = path or self.latest()
        if target is None:
            raise CheckpointError(f"no checkpoints in {self.directory}")
        return load_checkpoint(target, model)
