from .optim import AdamW, clip_gradients, cyclic_lr
from .training_pipeline import TrainResult, build_batch, train
from .evaluation_pipeline import EvaluationReport, evaluate, identification_accuracy
from .ablation import ABLATION_ROWS, run_ablation_grid, run_seeds
from .gradient_check import run_gradient_check

__all__ = [
    "AdamW",
    "clip_gradients",
    "cyclic_lr",
    "TrainResult",
    "build_batch",
    "train",
    "EvaluationReport",
    "evaluate",
    "identification_accuracy",
    "ABLATION_ROWS",
    "run_ablation_grid",
    "run_seeds",
    "run_gradient_check",
]
