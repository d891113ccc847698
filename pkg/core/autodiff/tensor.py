from __future__ import annotations
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import NumericalError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    Dense float64 array with an optional node on the active computation tape.

    Leaves (parameters, inputs) have no backward function; their gradients accumulate
    into `.grad`. Results of primitives are recorded on the tape whenever any input
    requires grad and recording is enabled.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        copy: bool = True,
    ):
        raw = data.data if isinstance(data, Tensor) else data
        arr = np.array(raw, dtype=np.float64) if copy else np.asarray(raw, dtype=np.float64)
        if not requires_grad:
            arr.flags.writeable = False
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"
        self._tape: Optional["Tape"] = None
        self._node_id = -1

    # basic introspection
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # operators delegate to the primitives in ops.py
    def __add__(self, other: ArrayLike) -> "Tensor":
        return _ops.add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return _ops.add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return _ops.sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return _ops.sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return _ops.mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return _ops.mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return _ops.div(self, other)

    def __neg__(self) -> "Tensor":
        return _ops.neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return _ops.matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return _ops.getitem(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Ordered record of primitive applications; inputs always precede outputs."""

    def __init__(self):
        self.nodes: List[Tensor] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node: Tensor) -> bool:
        return (
            node._tape is self
            and 0 <= node._node_id < len(self.nodes)
            and self.nodes[node._node_id] is node
        )

    def record(self, node: Tensor) -> None:
        node._tape = self
        node._node_id = len(self.nodes)
        self.nodes.append(node)

    def reset(self) -> None:
        for node in self.nodes:
            node._tape = None
            node._node_id = -1
        self.nodes = []

    def backward(self, root: Tensor) -> Dict[Tensor, np.ndarray]:
        if root.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        if root not in self:
            raise ValueError("backward root is not recorded on the active tape")

        pending: Dict[int, np.ndarray] = {root._node_id: np.ones_like(root.data)}
        leaf_grads: Dict[Tensor, np.ndarray] = {}

        for idx in range(root._node_id, -1, -1):
            g = pending.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(
                        f"{node._op} backward produced grad {pg.shape} for input {parent.shape}"
                    )
                if not np.all(np.isfinite(pg)):
                    raise NumericalError(f"non-finite gradient flowing out of {node._op}")
                if parent.is_leaf:
                    if parent in leaf_grads:
                        leaf_grads[parent] = leaf_grads[parent] + pg
                    else:
                        leaf_grads[parent] = np.array(pg, dtype=np.float64)
                elif parent in self:
                    prev = pending.get(parent._node_id)
                    pending[parent._node_id] = pg if prev is None else prev + pg

        for leaf, g in leaf_grads.items():
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        self.reset()
        return leaf_grads


_state = threading.local()


def current_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = Tape()
        _state.tape = tape
    return tape


def reset_tape() -> Tape:
    """Drop everything recorded so far and start a fresh tape for this thread."""
    old = getattr(_state, "tape", None)
    if old is not None:
        old.reset()
    _state.tape = Tape()
    return _state.tape


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def backward(root: Tensor) -> Dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar root; returns {leaf: d root / d leaf}."""
    if root.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    tape = root._tape
    if tape is None or root not in tape:
        raise ValueError("backward root is not recorded on any tape")
    return tape.backward(root)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        shapes = ", ".join(str(p.shape) for p in parents)
        raise NumericalError(f"{op} produced non-finite values (inputs: {shapes})")
    out = Tensor(data, copy=False)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
        current_tape().record(out)
    return out


from core.autodiff import ops as _ops  # noqa: E402  (operators above resolve lazily)
