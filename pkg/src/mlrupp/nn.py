"""Parameter-owning operator nodes built on :mod:`mlrupp.autodiff`."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ShapeError
from .tensor import Rng


class Parameter(Var):
    __slots__ = ("kind", "uses")

    def __init__(self, data, kind: str = "weight", uses: int = 1):
        super().__init__(data, requires_grad=True)
        self.kind = kind
        # number of branch applications; the attention-cost convention counts each
        self.uses = uses


@dataclass
class ParamRecord:
    name: str
    shape: tuple[int, ...]
    count: int
    tensor: Parameter = field(repr=False)
    kind: str = "weight"
    uses: int = 1

    def __post_init__(self):
        if self.count != int(np.prod(self.shape)):
            raise ValueError(f"{self.name}: count {self.count} != prod{self.shape}")


class Module:
    """A composed differentiable operator with owned parameters.

    Parameters, buffers and child modules are registered by attribute
    assignment, in assignment order.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = name
        object.__setattr__(self, name, value)

    def __call__(self, *inputs):
        return self.forward(*inputs)

    def forward(self, *inputs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        return iter(self._children.items())

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_params(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def params(self) -> list[Parameter]:
        return [p for _, p in self.named_params()]

    def param_records(self) -> list[ParamRecord]:
        records, seen = [], set()
        for name, p in self.named_params():
            if id(p) in seen:
                continue
            seen.add(id(p))
            records.append(ParamRecord(name, p.shape, int(p.data.size), p, p.kind, p.uses))
        return records

    def num_params(self) -> int:
        return sum(r.count for r in self.param_records())

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.named_params()}
        out.update({name: b.copy() for name, b in self.named_buffers()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_params())
        buffers = dict(self.named_buffers())
        for name, value in state.items():
            if name in params:
                target = params[name].data
            elif name in buffers:
                target = buffers[name]
            else:
                raise KeyError(f"unknown state entry {name!r}")
            if target.shape != np.shape(value):
                raise ShapeError(f"{name}: shape {np.shape(value)} != {target.shape}")
            target[...] = value


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def fan_in_uniform(rng: Rng | None, shape, fan_in: int) -> np.ndarray:
    if rng is None:
        return np.zeros(shape)
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class Conv(Module):
    """Dense, depthwise or pointwise convolution over ``ndim`` spatial axes."""

    def __init__(self, in_channels: int, out_channels: int, kernel=1, ndim: int = 2,
                 kind: str = "dense", stride=1, padding="same", bias: bool = True,
                 rng: Rng | None = None):
        super().__init__()
        kernel = ad._tuple(kernel, ndim)
        if kind == "pointwise" and any(k != 1 for k in kernel):
            raise ShapeError(f"pointwise conv needs a unit kernel, got {kernel}")
        if kind == "depthwise":
            if out_channels != in_channels:
                raise ShapeError("depthwise conv needs out_channels == in_channels")
            wshape = (in_channels, 1) + kernel
            fan_in = int(np.prod(kernel))
        else:
            wshape = (out_channels, in_channels) + kernel
            fan_in = in_channels * int(np.prod(kernel))
        self.kind, self.kernel, self.stride, self.padding = kind, kernel, stride, padding
        self.in_channels, self.out_channels, self.ndim = in_channels, out_channels, ndim
        self.weight = Parameter(fan_in_uniform(rng, wshape, fan_in))
        self.bias = Parameter(np.zeros(out_channels), kind="bias") if bias else None

    def forward(self, x):
        return ad.conv_nd(x, self.weight, self.bias, self.stride, self.padding, self.kind)


class ConvTranspose(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel=2, ndim: int = 3, stride=2,
                 padding=0, bias: bool = True, rng: Rng | None = None):
        super().__init__()
        kernel = ad._tuple(kernel, ndim)
        self.stride, self.padding = stride, padding
        self.weight = Parameter(fan_in_uniform(rng, (in_channels, out_channels) + kernel,
                                               in_channels * int(np.prod(kernel))))
        self.bias = Parameter(np.zeros(out_channels), kind="bias") if bias else None

    def forward(self, x):
        return ad.transposed_conv_nd(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Batch norm with gamma=1, beta=0 init, eps 1e-5, momentum 0.1.

    Running stats start at mean 0, var 1 so an untouched eval-mode layer is the
    identity (up to the eps term).
    """

    def __init__(self, channels: int, eps: float = ad.BN_EPS, momentum: float = ad.BN_MOMENTUM):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gamma = Parameter(np.ones(channels), kind="bn")
        self.beta = Parameter(np.zeros(channels), kind="bn")
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.eps, self.momentum)


class ReLU(Module):
    def forward(self, x):
        return ad.relu(x)


class ReLU6(Module):
    def forward(self, x):
        return ad.relu6(x)


class Sigmoid(Module):
    def forward(self, x):
        return ad.sigmoid(x)


class ChannelShuffle(Module):
    def __init__(self, groups: int):
        super().__init__()
        self.groups = groups

    def forward(self, x):
        return ad.channel_shuffle(x, self.groups)


class AdaptiveAvgPool(Module):
    def forward(self, x):
        return ad.adaptive_avg_pool(x)


class ChannelStatsPool(Module):
    def forward(self, x):
        return ad.channel_stats_pool(x)


class Add(Module):
    def forward(self, x, y):
        return ad.add(x, y)


class MulBroadcast(Module):
    def forward(self, x, a):
        return ad.mul_broadcast(x, a)
