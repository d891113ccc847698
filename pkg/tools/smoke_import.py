import sys
from pathlib import Path

# Ensure repo root on sys.path
repo = Path(__file__).resolve().parents[1]
if str(repo) not in sys.path:
    sys.path.insert(0, str(repo))

import app  # noqa: F401,E402
from core.config import build_config  # noqa: E402
from core.models.mome import MoMEModel  # noqa: E402

# Build the CLI parser and a tiny model to exercise every import path
app.build_parser()
model = MoMEModel(build_config("tiny").model)
print(f"ok ({model.num_parameters()} parameters)")
