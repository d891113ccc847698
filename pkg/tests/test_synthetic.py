import os

import numpy as np
import pytest
from scipy.stats import spearmanr

from core.data.synthetic import (
    PLANTED_TRAIT_MAP,
    PLANTED_VERSION,
    GeneratorSpec,
    draw_subject,
    generate_synthetic_dataset,
    quantize_score,
    write_generated,
)
from core.data.traits import TRAIT_NAMES
from core.errors import ConfigError
from core.utils.file_utils import read_json, sha256_file


def small_spec(**kw):
    base = dict(train_subjects=6, test_subjects=2, scenarios=("NM", "BG"), angles=(45, 90), runs=4, frames=8)
    base.update(kw)
    return GeneratorSpec(**base)


def test_sequence_count():
    data = generate_synthetic_dataset(small_spec())
    assert len(data.train) + len(data.test) == 8 * 2 * 2 * 4 == 128
    assert len(data.train.subjects()) == 6
    assert len(data.test.subjects()) == 2


def test_same_seed_same_data():
    a = generate_synthetic_dataset(small_spec(seed=3))
    b = generate_synthetic_dataset(small_spec(seed=3, workers=2))
    for x, y in zip(a.train.sequences + a.test.sequences, b.train.sequences + b.test.sequences):
        assert np.array_equal(x.frames, y.frames)


def test_different_seed_different_data():
    a = generate_synthetic_dataset(small_spec(seed=3))
    b = generate_synthetic_dataset(small_spec(seed=4))
    assert not np.array_equal(a.train.sequences[0].frames, b.train.sequences[0].frames)


def test_sequences_are_valid_and_labelled():
    data = generate_synthetic_dataset(small_spec(train_subjects=2, test_subjects=1, runs=1))
    for i, seq in enumerate(data.train.sequences):
        seq.validate()
        assert seq.frames.shape == (8, 17, 2)
        data.train.labels(i).validate()


def test_runs_of_one_subject_share_labels():
    data = generate_synthetic_dataset(small_spec(train_subjects=2, test_subjects=1))
    for idx in data.train.indices_by_subject().values():
        assert len({data.train.labels(i).identity for i in idx}) == 1
        assert len({data.train.labels(i).bmi for i in idx}) == 1


def test_planted_trait_is_monotone_in_its_latent():
    draws = [draw_subject(0, i) for i in range(1000)]
    latent, sign = PLANTED_TRAIT_MAP["bfi_openness"][0]
    rho, _ = spearmanr([sign * d.latents[latent] for d in draws], [d.labels.traits["bfi_openness"] for d in draws])
    assert rho > 0.9


def test_every_trait_is_planted():
    assert set(PLANTED_TRAIT_MAP) == set(TRAIT_NAMES)


def test_quantize_is_equal_probability():
    z = np.random.default_rng(0).standard_normal(20000)
    counts = np.bincount([quantize_score(v, 4) for v in z], minlength=4) / len(z)
    assert np.allclose(counts, 0.25, atol=0.02)
    assert quantize_score(-10.0, 5) == 0
    assert quantize_score(10.0, 5) == 4


def test_gender_is_balanced_enough():
    genders = [draw_subject(1, i).labels.gender for i in range(400)]
    assert 0.4 < np.mean(genders) < 0.6


def test_single_subject_is_rejected():
    with pytest.raises(ConfigError, match="at least 2 subjects"):
        generate_synthetic_dataset(small_spec(train_subjects=1, test_subjects=0))


@pytest.mark.parametrize("kw", [dict(scenarios=("XX",)), dict(angles=(91,)), dict(runs=0), dict(noise=-1.0)])
def test_spec_validation(kw):
    with pytest.raises(ConfigError):
        small_spec(**kw).validate()


def test_written_dataset_has_provenance(tmp_path):
    data = generate_synthetic_dataset(small_spec(train_subjects=2, test_subjects=1, runs=1))
    paths = write_generated(data, str(tmp_path))
    prov = read_json(paths["provenance"])
    assert prov["generator"] == PLANTED_VERSION
    assert prov["spec"]["seed"] == 0
    assert set(prov["trait_map"]) == set(TRAIT_NAMES)
    assert prov["train_subjects"] == data.train.subjects()
    assert os.path.exists(tmp_path / "manifest_train.json")
    assert os.path.exists(tmp_path / "manifest_test.json")


def test_written_bytes_are_identical_for_same_seed(tmp_path):
    spec = small_spec(train_subjects=2, test_subjects=1, runs=1)
    write_generated(generate_synthetic_dataset(spec), str(tmp_path / "a"))
    write_generated(generate_synthetic_dataset(spec), str(tmp_path / "b"))
    for name in ("manifest_train.json", "manifest_test.json", "provenance.json"):
        assert sha256_file(str(tmp_path / "a" / name)) == sha256_file(str(tmp_path / "b" / name))
    rel = generate_synthetic_dataset(spec).train.records[0].path
    assert sha256_file(str(tmp_path / "a" / rel)) == sha256_file(str(tmp_path / "b" / rel))
