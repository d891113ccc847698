import json
import logging
import os
import subprocess
import sys

import pytest

from app.cli import main
from app.utils.logger import LOG_FORMAT, setup_logging
from core.utils.file_utils import read_json, sha256_file


def run_json(capsys, argv):
    code = main(argv)
    return code, capsys.readouterr()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run = str(root / "data"), str(root / "run")
    assert main(["generate", "--preset", "tiny", "--out", data]) == 0
    assert main(["train", "--preset", "tiny", "--data", data, "--out", run]) == 0
    return data, run


def test_generate_writes_manifests(tmp_path, capsys):
    code, captured = run_json(capsys, ["generate", "--preset", "tiny", "--out", str(tmp_path / "d")])
    assert code == 0
    summary = json.loads(captured.out)
    assert summary["train_subjects"] == 4
    assert summary["test_subjects"] == 2
    assert summary["train_sequences"] == 4 * 2 * 2 * 2
    for name in ("manifest_train.json", "manifest_test.json", "run_config.json", "artifacts.json"):
        assert os.path.exists(tmp_path / "d" / name)
    assert read_json(str(tmp_path / "d" / "run_config.json"))["data.train_subjects"] == 4


def test_generate_same_seed_same_bytes(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["generate", "--preset", "tiny", "--seed", "5", "--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    for manifest in ("manifest_train.json", "manifest_test.json"):
        assert sha256_file(str(tmp_path / "a" / manifest)) == sha256_file(str(tmp_path / "b" / manifest))


def test_generate_rejects_bad_input(tmp_path, capsys):
    code, captured = run_json(capsys, ["generate", "--preset", "tiny", "--subjects", "1", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "at least 2 subjects" in captured.err
    busy = tmp_path / "busy"
    busy.mkdir()
    (busy / "keep.txt").write_text("x", encoding="utf-8")
    code, captured = run_json(capsys, ["generate", "--preset", "tiny", "--out", str(busy)])
    assert code == 2
    assert "--force" in captured.err
    assert main(["generate", "--preset", "tiny", "--out", str(busy), "--force"]) == 0


def test_unknown_override_is_a_config_error(tmp_path, capsys):
    code, captured = run_json(capsys, ["generate", "--set", "data.subjectz=3", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "data.subjectz" in captured.err


def test_train_writes_checkpoints(trained):
    _, run = trained
    names = sorted(os.listdir(os.path.join(run, "checkpoints")))
    assert names[-1] == "checkpoint_epoch_0003.npz"
    assert os.path.exists(os.path.join(run, "run_config.json"))
    assert os.path.exists(os.path.join(run, "artifacts.json"))


def test_evaluate_missing_checkpoint(tmp_path, trained, capsys):
    data, _ = trained
    code, captured = run_json(capsys, ["evaluate", "--data", data, "--checkpoint", str(tmp_path / "none.npz"), "--out", str(tmp_path)])
    assert code == 3
    assert "not found" in captured.err


def test_evaluate_writes_report(tmp_path, trained, capsys):
    data, run = trained
    ckpt = os.path.join(run, "checkpoints", "checkpoint_epoch_0003.npz")
    code, captured = run_json(capsys, ["evaluate", "--data", data, "--checkpoint", ckpt, "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads(captured.out)
    assert "identification_mean" in summary
    for name in ("report.json", "run_level.csv", "subject_level.csv", "heatmap.svg", "artifacts.json"):
        assert os.path.exists(tmp_path / name)


def test_evaluate_refuses_other_architecture(tmp_path, trained, capsys):
    data, run = trained
    ckpt = os.path.join(run, "checkpoints", "checkpoint_epoch_0003.npz")
    argv = ["evaluate", "--preset", "tiny", "--set", "model.channels=[4,8,8,16]", "--data", data, "--checkpoint", ckpt,
            "--out", str(tmp_path)]
    code, captured = run_json(capsys, argv)
    assert code == 3
    assert "config hash" in captured.err


def test_heatmap_command(tmp_path, trained, capsys):
    data, run = trained
    ckpt = os.path.join(run, "checkpoints", "checkpoint_epoch_0003.npz")
    code, captured = run_json(capsys, ["heatmap", "--data", data, "--checkpoint", ckpt, "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads(captured.out)
    assert summary["rows"] == 4
    assert summary["columns"] == 8
    assert os.path.exists(summary["heatmap_csv"])


@pytest.mark.slow
def test_gradcheck_command(tmp_path, capsys):
    code, captured = run_json(capsys, ["gradcheck", "--entries", "1", "--out", str(tmp_path / "ok")])
    assert code == 0
    assert json.loads(captured.out)["passed"] is True
    code, captured = run_json(capsys, ["gradcheck", "--entries", "1", "--corrupt-gradient", "--out", str(tmp_path / "bad")])
    assert code == 4
    assert "worst parameter" in captured.err
    assert read_json(str(tmp_path / "bad" / "gradcheck.json"))["passed"] is False


def test_importing_pipelines_leaves_logging_alone():
    root_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    code = (
        "import logging\n"
        "import core.pipelines.training_pipeline, core.pipelines.evaluation_pipeline\n"
        "print(len(logging.getLogger().handlers))\n"
    )
    out = subprocess.run([sys.executable, "-c", code], cwd=root_dir, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "0"


def test_setup_logging_applies_the_cli_format(monkeypatch):
    root = logging.getLogger()
    monkeypatch.setattr(root, "handlers", [])
    monkeypatch.setattr(root, "level", root.level)
    assert setup_logging("DEBUG") == logging.DEBUG
    assert root.handlers[0].formatter._fmt == LOG_FORMAT
    assert setup_logging("WARNING") == logging.WARNING
    assert len(root.handlers) == 1
    assert root.level == logging.WARNING
