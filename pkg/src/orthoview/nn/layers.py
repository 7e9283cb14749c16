"""Layers and parameter bookkeeping for the desk-scale networks."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Base class: child modules/parameters are found by attribute walk."""

    def __init__(self):
        self.training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def named_buffers(self, prefix: str = ""):
        """Non-learnable state (batchnorm running stats)."""
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{path}.{i}.")
        for name in getattr(self, "_buffer_names", ()):
            yield f"{prefix}{name}", getattr(self, name)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def set_training(self, flag: bool):
        self.training = flag
        for value in vars(self).values():
            if isinstance(value, Module):
                value.set_training(flag)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.set_training(flag)

    def train(self):
        self.set_training(True)
        return self

    def eval(self):
        self.set_training(False)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


class ParamStore:
    """Ordered view of a module's named parameters."""

    def __init__(self, named: list):
        self.named = list(named)
        names = [n for n, _ in self.named]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")

    @classmethod
    def from_module(cls, module: Module) -> "ParamStore":
        return cls(list(module.named_parameters()))

    @property
    def total_count(self) -> int:
        return sum(int(p.data.size) for _, p in self.named)

    def as_dict(self) -> dict:
        return dict(self.named)

    def __len__(self):
        return len(self.named)

    def __iter__(self):
        return iter(self.named)


def count_params(module: Module) -> int:
    return ParamStore.from_module(module).total_count


def he_normal(rng, shape, fan_in) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Module):
    """Channels-last conv; the weight is the (k*k*cin, cout) patch matrix."""

    def __init__(self, cin, cout, k, stride=1, pad=0, bias=False, rng=None):
        super().__init__()
        self.k, self.stride, self.pad = k, stride, pad
        self.weight = Parameter(he_normal(rng, (k * k * cin, cout), cin * k * k))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.k)


class Linear(Module):
    def __init__(self, cin, cout, bias=True, rng=None):
        super().__init__()
        self.weight = Parameter(he_normal(rng, (cin, cout), cin))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Normalizes over every axis except the last (channel) axis."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x: Tensor) -> Tensor:
        return T.batchnorm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            self.training,
            self.momentum,
            self.eps,
        )


class BasicBlock(Module):
    """Two 3x3 convs with identity or 1x1-projection shortcut."""

    def __init__(self, cin, cout, stride, rng):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, stride=stride, pad=1, rng=rng)
        self.bn1 = BatchNorm(cout)
        self.conv2 = Conv2d(cout, cout, 3, stride=1, pad=1, rng=rng)
        self.bn2 = BatchNorm(cout)
        if stride != 1 or cin != cout:
            self.proj_conv = Conv2d(cin, cout, 1, stride=stride, pad=0, rng=rng)
            self.proj_bn = BatchNorm(cout)
        else:
            self.proj_conv = None
            self.proj_bn = None

    def forward(self, x: Tensor) -> Tensor:
        out = T.relu(self.bn1.forward(self.conv1.forward(x)))
        out = self.bn2.forward(self.conv2.forward(out))
        shortcut = x if self.proj_conv is None else self.proj_bn.forward(self.proj_conv.forward(x))
        return T.relu(out + shortcut)


class ResNet18Backbone(Module):
    """ResNet18 topology with all widths divided by q; input is 1-channel.

    7x7/2 stem, 3x3/2 max pool, four stages of two basic blocks at widths
    (64, 128, 256, 512)/q, stride-2 entry with projection for stages 2-4,
    global average pool.  Output width is 512/q.  Input is (B, R, R, 1).
    """

    STAGE_WIDTHS = (64, 128, 256, 512)

    def __init__(self, q: int, rng):
        super().__init__()
        if q < 1:
            raise ValueError("q must be >= 1")
        widths = [w // q for w in self.STAGE_WIDTHS]
        if min(widths) < 1:
            raise ValueError(f"width divisor q={q} collapses a stage to 0 channels")
        self.stem = Conv2d(1, widths[0], 7, stride=2, pad=3, rng=rng)
        self.stem_bn = BatchNorm(widths[0])
        self.blocks = []
        cin = widths[0]
        for stage, w in enumerate(widths):
            for i in range(2):
                stride = 2 if (stage > 0 and i == 0) else 1
                self.blocks.append(BasicBlock(cin, w, stride, rng))
                cin = w
        self.out_width = widths[-1]

    def forward(self, x: Tensor) -> Tensor:
        out = T.relu(self.stem_bn.forward(self.stem.forward(x)))
        out = T.maxpool2d(out, 3, 2, 1)
        for block in self.blocks:
            out = block.forward(out)
        return T.global_avg_pool(out)
