from .tensor import Tape, Tensor, as_tensor, backward, current_tape, no_grad, reset_tape
from . import ops
from .ops import multi_head_attention, primitive_forward
from .gradcheck import GradCheckReport, finite_difference_check

__all__ = [
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "current_tape",
    "no_grad",
    "reset_tape",
    "ops",
    "multi_head_attention",
    "primitive_forward",
    "GradCheckReport",
    "finite_difference_check",
]
