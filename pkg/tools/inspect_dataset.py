import argparse
import json
import sys
from collections import Counter
from pathlib import Path

# Ensure repo root on sys.path
BASE_DIR = Path(__file__).resolve().parents[1]
if str(BASE_DIR) not in sys.path:
    sys.path.insert(0, str(BASE_DIR))

from core.data.loader import load_dataset  # noqa: E402
from core.data.traits import TRAIT_NAMES  # noqa: E402
from core.models.checkpoint import read_checkpoint  # noqa: E402

DEFAULT_DATA = BASE_DIR / "storage" / "dataset"


def summarize_split(manifest: Path):
    ds = load_dataset(str(manifest))
    labels = [ds.labels(i) for i in range(len(ds))]
    return {
        "split": ds.split,
        "sequences": len(ds),
        "subjects": len(ds.subjects()),
        "scenarios": dict(sorted(Counter(r.scenario for r in ds.records).items())),
        "angles": dict(sorted(Counter(r.view_angle for r in ds.records).items())),
        "gender": dict(sorted(Counter(lab.gender for lab in labels).items())),
        "bmi_range": [min(lab.bmi for lab in labels), max(lab.bmi for lab in labels)] if labels else None,
        "traits": {name: dict(sorted(Counter(lab.traits[name] for lab in labels).items())) for name in TRAIT_NAMES},
    }


def summarize_checkpoint(path: Path):
    meta, tensors = read_checkpoint(str(path))
    return {
        "epoch": meta.get("epoch"),
        "config_hash": meta.get("config_hash"),
        "tasks": [t["name"] for t in meta.get("roster", [])],
        "tensors": len(tensors),
        "parameters": int(sum(t.size for t in tensors.values())),
        "bmi": meta.get("bmi"),
        "extra": meta.get("extra"),
    }


def main():
    ap = argparse.ArgumentParser(description="Print label / scenario balance of a generated dataset")
    ap.add_argument("--data", default=str(DEFAULT_DATA), help="Dataset directory")
    ap.add_argument("--checkpoint", help="Also print the metadata of a checkpoint")
    ap.add_argument("--json", action="store_true", help="Output JSON")
    args = ap.parse_args()

    data_dir = Path(args.data).resolve()
    out = {}
    for manifest in sorted(data_dir.glob("manifest_*.json")):
        out[manifest.stem] = summarize_split(manifest)
    if args.checkpoint:
        out["checkpoint"] = summarize_checkpoint(Path(args.checkpoint))

    if args.json:
        print(json.dumps(out, indent=2, sort_keys=True))
        return
    for name, info in out.items():
        if name == "checkpoint":
            print(f"checkpoint: epoch={info['epoch']} tasks={len(info['tasks'])} params={info['parameters']}")
            continue
        print(f"{name}: {info['sequences']} sequences, {info['subjects']} subjects")
        print(f"  scenarios={info['scenarios']} angles={info['angles']} gender={info['gender']}")
        for trait, counts in info["traits"].items():
            print(f"  {trait}: {counts}")


if __name__ == "__main__":
    main()
