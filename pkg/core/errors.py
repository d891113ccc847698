from __future__ import annotations
from typing import Iterable, Optional


class MomeError(Exception):
    """Base error. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code = 1


class ConfigError(MomeError):
    exit_code = 2


class ShapeError(ConfigError, ValueError):
    """Shape contract violated by an op or a module."""


class DataError(MomeError):
    exit_code = 3


class DegeneratePoseError(DataError):
    pass


class SequenceTooShortError(DataError):
    pass


class CheckpointError(MomeError):
    exit_code = 3


class EvaluationError(MomeError):
    exit_code = 3


class NumericalError(MomeError):
    exit_code = 4


class TrainingAborted(NumericalError):
    def __init__(self, message: str, last_checkpoint: Optional[str] = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class GradientCheckFailed(NumericalError):
    def __init__(self, message: str, worst_tensor: Optional[str] = None, worst_error: float = float("nan")):
        super().__init__(message)
        self.worst_tensor = worst_tensor
        self.worst_error = worst_error


def join_names(names: Iterable[str], limit: int = 10) -> str:
    names = [str(n) for n in names]
    head = ", ".join(names[:limit])
    return head if len(names) <= limit else f"{head}, ... (+{len(names) - limit} more)"
