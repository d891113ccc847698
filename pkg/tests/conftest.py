import os
import sys

import pytest

# Ensure project root is on sys.path for imports like `from core...`
ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
	sys.path.insert(0, ROOT)

from core.config import build_config, env_flag  # noqa: E402
from core.data.synthetic import GeneratorSpec, generate_synthetic_dataset, write_generated  # noqa: E402
from core.models.mome import MoMEModel  # noqa: E402

RUN_SLOW = env_flag("MOME_RUN_SLOW")


def pytest_configure(config):
	config.addinivalue_line("markers", "slow: desk-scale experiment, runs only with MOME_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
	if RUN_SLOW:
		return
	skip = pytest.mark.skip(reason="set MOME_RUN_SLOW=1 to run desk-scale experiments")
	for item in items:
		if "slow" in item.keywords:
			item.add_marker(skip)


@pytest.fixture(scope="session")
def tiny_cfg():
	return build_config("tiny")


@pytest.fixture(scope="session")
def tiny_data(tiny_cfg):
	return generate_synthetic_dataset(GeneratorSpec.from_config(tiny_cfg.data))


@pytest.fixture
def tiny_model(tiny_cfg):
	return MoMEModel(tiny_cfg.model)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory, tiny_data):
	out = tmp_path_factory.mktemp("tiny_dataset")
	write_generated(tiny_data, str(out))
	return str(out)
