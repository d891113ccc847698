import os

import numpy as np
import pytest
from scipy.stats import special_ortho_group
from sklearn.metrics import f1_score

from core.errors import EvaluationError
from core.models.metrics import (
    accuracy,
    bmi_mae,
    confusion_matrix,
    constant_predictor_f1,
    per_class_f1,
    summarize_scores,
    weighted_f1,
)
from core.pipelines.evaluation_pipeline import (
    PredictionRecord,
    Predictions,
    evaluate,
    expert_activation_heatmap,
    gate_specialization,
    identification_accuracy,
    predict,
    run_level_evaluate,
    subject_level_aggregate,
)
from core.pipelines.reporting import render_heatmap_svg, write_report
from core.utils.file_utils import read_csv, read_json, sha256_file


def brute_force_weighted_f1(y_true, y_pred, num_classes):
    total, n = 0.0, len(y_true)
    for c in range(num_classes):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
        total += f1 * sum(1 for t in y_true if t == c) / n
    return total


def gait_grid(subjects=4, angles=(45, 90, 270), nm_runs=2, bg_runs=1):
    meta = []
    for s in range(subjects):
        for a in angles:
            meta += [(f"S{s:04d}", "NM", a, r) for r in range(nm_runs)]
            meta += [(f"S{s:04d}", "BG", a, r) for r in range(bg_runs)]
    subj, scen, ang, run = (list(col) for col in zip(*meta))
    return subj, scen, ang, run


def test_weighted_f1_examples():
    assert weighted_f1([0, 1, 2, 1], [0, 1, 2, 1], 3) == 1.0
    assert weighted_f1([0, 0, 0, 1], [0, 0, 1, 1], 2) == pytest.approx((3 * 0.8 + 2 / 3) / 4)
    assert weighted_f1([0, 0, 0, 1], [0, 0, 1, 1], 2) == pytest.approx(0.7667, abs=1e-4)
    # class 2 is absent from both labels and predictions
    assert weighted_f1([0, 0, 0, 1], [0, 0, 1, 1], 3) == pytest.approx(weighted_f1([0, 0, 0, 1], [0, 0, 1, 1], 2))


def test_weighted_f1_matches_reference_implementations():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        c = int(rng.integers(2, 6))
        n = int(rng.integers(1, 30))
        y_true, y_pred = rng.integers(0, c, n), rng.integers(0, c, n)
        ours = weighted_f1(y_true, y_pred, c)
        assert abs(ours - brute_force_weighted_f1(y_true.tolist(), y_pred.tolist(), c)) < 1e-12
        assert ours == pytest.approx(f1_score(y_true, y_pred, average="weighted", zero_division=0), abs=1e-12)


def test_weighted_f1_errors():
    with pytest.raises(EvaluationError):
        weighted_f1([], [], 2)
    with pytest.raises(EvaluationError):
        weighted_f1([0, 3], [0, 1], 3)


def test_confusion_and_per_class():
    cm = confusion_matrix([0, 0, 1], [0, 1, 1], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 0]]
    assert np.allclose(per_class_f1(cm), [2 / 3, 2 / 3, 0.0])
    assert accuracy([0, 0, 1], [0, 1, 1]) == pytest.approx(2 / 3)


def test_summary_mean():
    scores = summarize_scores({"a": 0.5, "b": 0.7})
    assert scores["mean"] == pytest.approx(0.6)


def test_constant_predictor_run_level(tiny_model):
    rng = np.random.default_rng(1)
    targets = rng.integers(0, 4, 40)
    records = [
        PredictionRecord(i, f"S{i % 5:04d}", "NM", 90, 0, probs={"bfi_openness": np.array([0.1, 0.2, 0.6, 0.1])})
        for i in range(40)
    ]
    preds = Predictions(records, {}, {"bfi_openness": targets})
    scores = run_level_evaluate(preds, tiny_model)
    assert list(scores) == ["bfi_openness"]
    assert scores["bfi_openness"] == pytest.approx(constant_predictor_f1(targets, 4, 2), abs=1e-12)


def rec(subject, probs):
    return PredictionRecord(0, subject, "NM", 90, 0, probs={"t": np.array(probs)})


def test_subject_aggregation_examples():
    assert subject_level_aggregate([rec("A", [0.3, 0.7])], "t") == {"A": 1}
    assert subject_level_aggregate([rec("A", [0.6, 0.4]), rec("A", [0.2, 0.8])], "t") == {"A": 1}
    assert subject_level_aggregate([rec("A", [0.5, 0.5])], "t") == {"A": 0}
    assert subject_level_aggregate([rec("B", [0.9, 0.1]), rec("A", [0.1, 0.9])], "t") == {"A": 1, "B": 0}


def test_one_hot_identities_are_always_found():
    subj, scen, ang, run = gait_grid()
    ids = sorted(set(subj))
    emb = np.eye(len(ids))[[ids.index(s) for s in subj]]
    table = identification_accuracy(emb, subj, scen, ang, run)
    assert table.mean == 1.0
    assert set(table.accuracy) == {"NM", "BG"}
    assert all(v == 1.0 for row in table.accuracy.values() for v in row.values())
    assert table.scored_pairs == 2 * 3 * 2


def test_random_embeddings_score_near_chance():
    subj, scen, ang, run = gait_grid(subjects=20, angles=(0, 45, 90, 135), nm_runs=4, bg_runs=4)
    emb = np.random.default_rng(2).normal(size=(len(subj), 16))
    table = identification_accuracy(emb, subj, scen, ang, run, angle_average="pooled")
    assert abs(table.mean - 1 / 20) < 0.04


def test_single_angle_scores_nothing():
    subj, scen, ang, run = gait_grid(angles=(90,))
    table = identification_accuracy(np.random.default_rng(3).normal(size=(len(subj), 4)), subj, scen, ang, run)
    assert table.scored_pairs == 0
    assert table.accuracy == {}


def test_missing_gallery_lists_subjects():
    subj, scen, ang, run = gait_grid()
    keep = [i for i in range(len(subj)) if not (subj[i] == "S0002" and scen[i] == "NM" and ang[i] == 90)]
    cols = [[c[i] for i in keep] for c in (subj, scen, ang, run)]
    with pytest.raises(EvaluationError, match="S0002"):
        identification_accuracy(np.ones((len(keep), 4)), *cols)


def test_identification_is_rotation_invariant():
    subj, scen, ang, run = gait_grid(subjects=6)
    rng = np.random.default_rng(4)
    centers = rng.normal(size=(6, 8))
    ids = sorted(set(subj))
    emb = centers[[ids.index(s) for s in subj]] + rng.normal(size=(len(subj), 8)) * 0.8
    q = special_ortho_group.rvs(8, random_state=5)
    a = identification_accuracy(emb, subj, scen, ang, run)
    b = identification_accuracy(emb @ q, subj, scen, ang, run)
    assert a.accuracy == b.accuracy


def test_bmi_mae_examples():
    t = np.array([20.0, 25.0, 31.0])
    assert bmi_mae(t, t) == 0.0
    assert bmi_mae(t + 2.7, t) == pytest.approx(2.7)
    p = np.array([21.0, 24.0, 35.0])
    assert bmi_mae(p, t) == pytest.approx(np.mean(np.abs(p - t)))
    with pytest.raises(EvaluationError):
        bmi_mae([np.nan], [1.0])


def test_heatmap_blocks_sum_to_one():
    rng = np.random.default_rng(6)
    def simplex(n, k):
        raw = rng.random((n, k))
        return raw / raw.sum(axis=1, keepdims=True)
    gates = {owner: [simplex(10, 3), simplex(10, 2), simplex(10, 4), simplex(10, 1)] for owner in ("main", "bmi", "gender")}
    heatmap = expert_activation_heatmap(gates)
    assert heatmap.rows == ["main", "bmi", "gender"]
    assert heatmap.matrix.shape == (3, 10)
    for r in range(3):
        for stage in range(1, 5):
            assert heatmap.block(r, stage).sum() == pytest.approx(1.0, abs=1e-9)
    specialization, sharpness = gate_specialization(gates)
    assert 0 < specialization <= sharpness <= 1.0


def test_single_expert_heatmap_is_all_ones():
    gates = {o: [np.ones((5, 1)) for _ in range(4)] for o in ("main", "bmi")}
    assert np.array_equal(expert_activation_heatmap(gates).matrix, np.ones((2, 4)))
    with pytest.raises(EvaluationError):
        expert_activation_heatmap({})


def test_predict_probabilities_are_simplexes(tiny_model, tiny_data):
    preds = predict(tiny_model, tiny_data.test, batch_size=3)
    assert len(preds.records) == len(tiny_data.test)
    for r in preds.records:
        assert r.probs["bfi_openness"].sum() == pytest.approx(1.0, abs=1e-6)
        assert r.embedding.shape == (4,)
        assert np.isfinite(r.bmi)
    assert preds.gates["main"][0].shape == (len(tiny_data.test), 2)


def test_evaluate_report(tiny_cfg, tiny_model, tiny_data):
    report = evaluate(tiny_model, tiny_data.test, tiny_cfg)
    again = evaluate(tiny_model, tiny_data.test, tiny_cfg)
    assert report.to_dict() == again.to_dict()
    assert set(report.run_level) == {"bfi_openness", "mean"}
    assert report.run_level["mean"] == pytest.approx(report.run_level["bfi_openness"], abs=1e-9)
    assert report.gender_f1 is None
    assert report.bmi_mae is not None and report.bmi_mae >= 0
    assert report.identification is not None and 0.0 <= report.identification.mean <= 1.0
    assert report.heatmap.rows == ["main", "bfi_openness", "bmi", "identity"]
    assert report.samples == len(tiny_data.test)
    assert report.subjects == 2
    assert any(row["view_angle"] == "mean" for row in report.auxiliary)


def test_write_report(tmp_path, tiny_cfg, tiny_model, tiny_data):
    report = evaluate(tiny_model, tiny_data.test, tiny_cfg)
    paths = write_report(report, str(tmp_path))
    for name in ("report.json", "run_level.csv", "subject_level.csv", "auxiliary.csv", "heatmap.csv", "heatmap.svg"):
        assert os.path.exists(tmp_path / name)
    assert read_json(paths["report"])["samples"] == len(tiny_data.test)
    rows = read_csv(paths["run_level"])
    assert [r["trait"] for r in rows] == ["bfi_openness", "mean"]


def test_heatmap_svg_is_deterministic(tmp_path):
    gates = {o: [np.full((4, 2), 0.5) for _ in range(4)] for o in ("main", "bmi")}
    heatmap = expert_activation_heatmap(gates)
    a = render_heatmap_svg(heatmap, str(tmp_path / "a.svg"))
    b = render_heatmap_svg(heatmap, str(tmp_path / "b.svg"))
    assert sha256_file(a) == sha256_file(b)
