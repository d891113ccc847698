import os

import pytest

from core.config import build_config
from core.pipelines.ablation import ABLATION_ROWS, METRICS, run_ablation_grid, run_seeds, seeded_config, summarize_seeds


@pytest.fixture(scope="module")
def full_roster_cfg():
    return build_config("tiny", overrides={"model.tasks": "all", "train.epochs": 1})


def test_grid_has_eleven_distinct_rows():
    assert [r for r, _ in ABLATION_ROWS] == list(range(1, 12))
    assert len({groups for _, groups in ABLATION_ROWS}) == 11


def test_summarize_seeds():
    summary = summarize_seeds([{"gender_f1": 0.5, "bmi_mae": None}, {"gender_f1": 0.7, "bmi_mae": None}])
    assert summary["gender_f1"] == pytest.approx(0.6)
    assert summary["gender_f1_std"] == pytest.approx(0.1)
    assert summary["bmi_mae"] is None
    assert set(METRICS) <= set(summary)


def test_seeded_config_moves_both_seeds(tiny_cfg):
    cfg = seeded_config(tiny_cfg, 7)
    assert cfg.train.seed == 7
    assert cfg.model.init_seed == 7


def test_run_seeds(tiny_cfg, tiny_data, tmp_path):
    per_seed, summary = run_seeds(tiny_cfg, tiny_data.train, tiny_data.test, [0, 1], str(tmp_path))
    assert [r["seed"] for r in per_seed] == [0, 1]
    assert summary["gender_f1"] is None
    assert summary["trait_f1_run"] is not None
    assert os.path.exists(tmp_path / "seed_1" / "evaluation" / "report.json")


def test_grid_rows_leave_inactive_metrics_empty(full_roster_cfg, tiny_data, tmp_path):
    table = run_ablation_grid(full_roster_cfg, tiny_data.train, tiny_data.test, str(tmp_path), rows=[1, 7])
    assert [r["row"] for r in table] == [1, 7]
    identity_only, bmi_traits = table
    assert identity_only["identity"] == 1 and identity_only["traits"] == 0
    assert identity_only["identification"] is not None
    assert identity_only["bmi_mae"] is None and identity_only["trait_f1_run"] is None
    assert bmi_traits["identification"] is None
    assert bmi_traits["bmi_mae"] is not None and bmi_traits["trait_f1_subject"] is not None
    assert os.path.exists(tmp_path / "ablation.csv")
