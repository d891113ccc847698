"""Flags and plumbing shared by every command."""
from __future__ import annotations
import argparse
import json
import logging
import os
from typing import Any, Dict, List, Optional

from core.config import RunConfig, build_config, env_int
from core.data.loader import Dataset, check_split_disjoint, load_dataset
from core.errors import CheckpointError, ConfigError, DataError
from core.models.checkpoint import load_checkpoint
from core.models.losses import BmiScaler
from core.models.mome import MoMEModel
from core.utils.file_utils import write_artifact_manifest, write_text

logger = logging.getLogger(__name__)

RUN_CONFIG = "run_config.json"
ARTIFACTS = "artifacts.json"


def add_common_args(p: argparse.ArgumentParser, default_preset: Optional[str] = None) -> None:
    p.add_argument(
        "--preset",
        default=default_preset,
        help=f"Named preset from configs/ (tiny, desk, paper){f'; default {default_preset}' if default_preset else ''}",
    )
    p.add_argument("--config", help="JSON file of dotted keys, applied after the preset")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override any dotted config key, e.g. --set train.epochs=10 (repeatable)",
    )
    p.add_argument("--out", help="Output directory for every artifact of this command")
    p.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR (default: $MOME_LOG_LEVEL or INFO)")


def add_data_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="Dataset directory holding manifest_train.json / manifest_test.json")


def parse_overrides(items: List[str]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        out[key.strip()] = value
    return out


def subjects_split(total: int) -> Dict[str, int]:
    """--subjects N keeps roughly a quarter of the subjects for testing."""
    test = total // 4
    return {"data.train_subjects": total - test, "data.test_subjects": test}


def resolve_config(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults < --preset < --config < --set < named shortcut flags."""
    overrides: Dict[str, Any] = {}
    if "MOME_WORKERS" in os.environ:
        overrides["data.workers"] = env_int("MOME_WORKERS", 1)
    overrides.update(parse_overrides(getattr(args, "overrides", []) or []))
    if getattr(args, "subjects", None) is not None:
        overrides.update(subjects_split(args.subjects))
    if getattr(args, "data", None):
        overrides["data.dir"] = args.data
    if getattr(args, "out", None):
        overrides["out"] = args.out
    overrides.update(extra or {})
    return build_config(getattr(args, "preset", None), getattr(args, "config", None), overrides)


def explicit_model_config(args: argparse.Namespace) -> bool:
    """True when the caller said anything about the architecture."""
    keys = parse_overrides(getattr(args, "overrides", []) or [])
    return bool(args.preset or args.config or any(k.startswith("model.") for k in keys))


def prepare_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def load_split(cfg: RunConfig, split: str) -> Dataset:
    path = os.path.join(cfg.data.dir, f"manifest_{split}.json")
    if not os.path.exists(path):
        raise DataError(f"no {split} manifest at {path}; run `generate --out {cfg.data.dir}` first")
    return load_dataset(path, workers=cfg.data.workers)


def load_splits(cfg: RunConfig) -> Dict[str, Dataset]:
    train, test = load_split(cfg, "train"), load_split(cfg, "test")
    check_split_disjoint(train, test)
    return {"train": train, "test": test}


def finish(cfg: RunConfig, out_dir: str) -> str:
    """Write run_config.json then the artifact manifest over everything under out_dir."""
    write_text(os.path.join(out_dir, RUN_CONFIG), cfg.to_json())
    path = write_artifact_manifest(out_dir, ARTIFACTS)
    logger.info("[cli] artifacts listed in %s", path)
    return path


def print_json(payload: Any) -> None:
    print(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True))


def add_checkpoint_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True, help="Checkpoint .npz written by train")
    p.add_argument("--split", default="test", choices=["train", "test"], help="Dataset split to evaluate (default test)")


def load_model(args: argparse.Namespace, cfg: RunConfig):
    """
    Rebuild the model stored in the checkpoint. When the caller gave a preset, a config
    file or model.* overrides, that architecture is built instead and must hash-match.
    """
    if not os.path.exists(args.checkpoint):
        raise CheckpointError(f"checkpoint not found: {args.checkpoint}")
    model = MoMEModel(cfg.model) if explicit_model_config(args) else None
    model, meta = load_checkpoint(args.checkpoint, model)
    logger.info("[cli] loaded %s (epoch %s, hash %s)", args.checkpoint, meta.get("epoch"), model.config_hash[:12])
    return model, BmiScaler.from_dict(meta.get("bmi")), meta
