import csv
import hashlib
import io
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence


def iter_files_by_extensions(root: str, extensions: Iterable[str]):
    exts = set(e.lower() for e in extensions)
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            if os.path.splitext(name)[1].lower() in exts:
                yield os.path.join(dirpath, name)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def write_text(path: str, text: str) -> str:
    ensure_parent(path)
    # newline="" keeps bytes identical across platforms
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return path


def write_json(path: str, payload: Any) -> str:
    return write_text(path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def format_float(x: float) -> str:
    """Shortest repr that round-trips a float64."""
    return repr(float(x))


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    return write_text(path, csv_text(header, rows))


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def dir_is_nonempty(path: str) -> bool:
    p = Path(path)
    return p.is_dir() and any(p.iterdir())


def write_artifact_manifest(out_dir: str, name: str = "artifacts.json", exclude: Optional[Sequence[str]] = None) -> str:
    """Record every file under `out_dir` (relative path + sha256), sorted."""
    skip = set(exclude or ()) | {name}
    entries = []
    for path in iter_files_by_extensions(out_dir, {".json", ".csv", ".svg", ".npz", ".txt"}):
        rel = os.path.relpath(path, out_dir).replace("\\", "/")
        if rel in skip:
            continue
        entries.append({"path": rel, "sha256": sha256_file(path)})
    entries.sort(key=lambda e: e["path"])
    return write_json(os.path.join(out_dir, name), {"artifacts": entries})
