"""Parameter containers and transformer building blocks on top of core.autodiff."""
from __future__ import annotations
import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import truncnorm

from core.autodiff import Tensor, ops
from core.errors import CheckpointError, ConfigError

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape: Sequence[int], std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations."""
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=tuple(shape), random_state=rng).astype(np.float64)


class Module:
    """
    Minimal nn.Module: attributes that are grad-requiring Tensors become parameters,
    attributes that are Modules become children. Names follow attribute paths.
    """

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
            if value.name is None:
                value.name = name
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def parameter(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        setattr(self, name, t)
        return t

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise CheckpointError(
                    f"state mismatch: missing {missing[:5]} unexpected {unexpected[:5]}"
                )
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise CheckpointError(f"tensor {name}: shape {arr.shape} does not match {p.shape}")
            p.data[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        self._items: List[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


class ModuleDict(Module):
    def __init__(self, modules: Optional[Mapping[str, Module]] = None):
        super().__init__()
        self._items: Dict[str, Module] = OrderedDict()
        for k, m in (modules or {}).items():
            self[k] = m

    def __setitem__(self, key: str, module: Module) -> None:
        setattr(self, key, module)
        self._items[key] = module

    def __getitem__(self, key: str) -> Module:
        return self._items[key]

    def __contains__(self, key: str) -> bool:
        return key in self._items

    def __len__(self) -> int:
        return len(self._items)

    def keys(self):
        return self._items.keys()

    def items(self):
        return self._items.items()


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
        std: float = INIT_STD,
    ):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        w = np.zeros((in_features, out_features)) if zero_init else trunc_normal(rng, (in_features, out_features), std)
        self.parameter("weight", w)
        self.has_bias = bias
        if bias:
            self.parameter("bias", np.zeros(out_features))

    def forward(self, x) -> Tensor:
        y = ops.matmul(x, self.weight)
        return ops.add(y, self.bias) if self.has_bias else y


class LayerNorm(Module):
    def __init__(self, width: int):
        super().__init__()
        self.parameter("gamma", np.ones(width))
        self.parameter("beta", np.zeros(width))

    def forward(self, x) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class MultiHeadSelfAttention(Module):
    """Self-attention along one axis; `inner` is the q/k/v width (a multiple of `heads`)."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator, inner: Optional[int] = None):
        super().__init__()
        inner = width if inner is None else inner
        if heads < 1 or inner % heads:
            raise ConfigError(f"attention width {inner} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(width, inner, rng)
        self.k = Linear(width, inner, rng)
        self.v = Linear(width, inner, rng)
        self.out = Linear(inner, width, rng)

    def forward(self, x, axis: int) -> Tensor:
        attended = ops.multi_head_attention(self.q(x), self.k(x), self.v(x), self.heads, axis=axis)
        return self.out(attended)


class MLP(Module):
    def __init__(self, width: int, hidden: int, out: int, rng: np.random.Generator, zero_out: bool = False,
                 out_std: float = INIT_STD):
        super().__init__()
        self.fc1 = Linear(width, hidden, rng)
        self.fc2 = Linear(hidden, out, rng, zero_init=zero_out, std=out_std)

    def forward(self, x) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-norm transformer block: x + MHA(LN x), then x + MLP(LN x)."""

    def __init__(
        self,
        width: int,
        heads: int,
        rng: np.random.Generator,
        inner: Optional[int] = None,
        mlp_hidden: Optional[int] = None,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.norm1 = LayerNorm(width)
        self.attn = MultiHeadSelfAttention(width, heads, rng, inner)
        self.norm2 = LayerNorm(width)
        self.mlp = MLP(width, mlp_hidden or 2 * width, width, rng)
        self.dropout = dropout

    def forward(self, x, axis: int, rng: Optional[np.random.Generator] = None) -> Tensor:
        h = ops.dropout(self.attn(self.norm1(x), axis), self.dropout, rng)
        x = ops.add(x, h)
        h = ops.dropout(self.mlp(self.norm2(x)), self.dropout, rng)
        return ops.add(x, h)


class Encoder(Module):
    def __init__(self, blocks: Sequence[EncoderBlock]):
        super().__init__()
        self.blocks = ModuleList(blocks)

    def forward(self, x, axis: int, rng: Optional[np.random.Generator] = None) -> Tensor:
        for block in self.blocks:
            x = block(x, axis, rng)
        return x


def scaled_dims(width: int, heads: int, depth: int, mlp_ratio: float, amplifier: float) -> Tuple[int, int, int, int]:
    """
    (heads, inner width, mlp hidden, depth) of an encoder scaled by `amplifier`.
    Width in and out stays `width`; amplifier 1 reproduces the unscaled encoder.
    """
    h = max(1, int(round(amplifier * heads)))
    inner = max(h, h * int(round(amplifier * width / h)))
    hidden = max(1, int(round(amplifier * mlp_ratio * width)))
    d = max(1, int(math.ceil(amplifier * depth - 1e-9)))
    return h, inner, hidden, d


def build_encoder(
    width: int,
    heads: int,
    depth: int,
    mlp_ratio: float,
    amplifier: float,
    rng: np.random.Generator,
    dropout: float = 0.0,
) -> Encoder:
    h, inner, hidden, d = scaled_dims(width, heads, depth, mlp_ratio, amplifier)
    return Encoder([EncoderBlock(width, h, rng, inner, hidden, dropout) for _ in range(d)])


def count_parameters(module: Module) -> int:
    return module.num_parameters()
