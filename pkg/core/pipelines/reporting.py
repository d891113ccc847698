"""JSON / CSV / SVG emitters for evaluation and ablation results."""
from __future__ import annotations
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from core.data.traits import TRAIT_CLASSES, TRAIT_NAMES, trait_spec
from core.pipelines.evaluation_pipeline import EvaluationReport, Heatmap
from core.utils.file_utils import write_csv, write_json

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "mome-heatmap"


def _score_rows(scores: Dict[str, float]) -> List[List]:
    rows = []
    for name in TRAIT_NAMES:
        if name in scores:
            spec = trait_spec(name)
            rows.append([name, spec.questionnaire, TRAIT_CLASSES[name], float(scores[name])])
    if "mean" in scores:
        rows.append(["mean", "", "", float(scores["mean"])])
    return rows


def write_heatmap_csv(heatmap: Heatmap, path: str) -> str:
    header = ["row"] + [f"stage{s}_expert{k}" for s, k in heatmap.columns]
    rows = ([name] + [float(v) for v in heatmap.matrix[i]] for i, name in enumerate(heatmap.rows))
    return write_csv(path, header, rows)


def render_heatmap_svg(heatmap: Heatmap, path: str, title: str = "Expert activation") -> str:
    """Deterministic SVG: fixed hash salt and no date metadata."""
    matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    height = max(3.0, 0.28 * len(heatmap.rows) + 1.5)
    width = max(4.0, 0.35 * len(heatmap.columns) + 3.0)
    fig, ax = plt.subplots(figsize=(width, height))
    try:
        im = ax.imshow(heatmap.matrix, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_yticks(np.arange(len(heatmap.rows)))
        ax.set_yticklabels(heatmap.rows, fontsize=7)
        ax.set_xticks(np.arange(len(heatmap.columns)))
        ax.set_xticklabels([f"S{s}E{k}" for s, k in heatmap.columns], fontsize=6, rotation=90)
        stages = [s for s, _ in heatmap.columns]
        for i in range(1, len(stages)):
            if stages[i] != stages[i - 1]:
                ax.axvline(i - 0.5, color="white", linewidth=1.0)
        ax.set_title(title, fontsize=9)
        fig.colorbar(im, ax=ax, fraction=0.03)
        fig.tight_layout()
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return path


def write_heatmap(heatmap: Heatmap, out_dir: str) -> Dict[str, str]:
    return {
        "heatmap_csv": write_heatmap_csv(heatmap, os.path.join(out_dir, "heatmap.csv")),
        "heatmap_svg": render_heatmap_svg(heatmap, os.path.join(out_dir, "heatmap.svg")),
    }


def _cell(v):
    if v is None:
        return "-"
    return float(v) if isinstance(v, (float, np.floating)) else v


def write_report(report: EvaluationReport, out_dir: str) -> Dict[str, str]:
    header = ["trait", "questionnaire", "classes", "weighted_f1"]
    paths = {
        "report": write_json(os.path.join(out_dir, "report.json"), report.to_dict()),
        "run_level": write_csv(os.path.join(out_dir, "run_level.csv"), header, _score_rows(report.run_level)),
        "subject_level": write_csv(os.path.join(out_dir, "subject_level.csv"), header, _score_rows(report.subject_level)),
        "auxiliary": write_csv(
            os.path.join(out_dir, "auxiliary.csv"),
            ["scenario", "view_angle", "samples", "identification", "gender_f1", "bmi_mae"],
            ([_cell(r.get(c)) for c in ("scenario", "view_angle", "samples", "identification", "gender_f1", "bmi_mae")]
             for r in report.auxiliary),
        ),
    }
    if report.heatmap is not None:
        paths.update(write_heatmap(report.heatmap, out_dir))
    logger.info("[report] wrote %s", ", ".join(sorted(paths)))
    return paths


ABLATION_COLUMNS = [
    "row", "identity", "gender", "bmi", "traits", "seeds",
    "identification", "identification_std", "gender_f1", "gender_f1_std",
    "bmi_mae", "bmi_mae_std", "trait_f1_run", "trait_f1_run_std", "trait_f1_subject", "trait_f1_subject_std",
]


def write_ablation_csv(rows: Sequence[Dict], path: str) -> str:
    return write_csv(path, ABLATION_COLUMNS, ([_cell(r.get(c)) for c in ABLATION_COLUMNS] for r in rows))


def write_seed_summary(summary: Dict, path: str, extra: Optional[Dict] = None) -> str:
    payload = dict(summary)
    if extra:
        payload.update(extra)
    return write_json(path, payload)
