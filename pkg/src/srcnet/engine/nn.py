"""Lightweight module system: parameter registration, conv / norm layers.

Modules register ``Parameter`` attributes and child modules automatically;
buffers (non-trainable state such as batch-norm running statistics) are
registered explicitly. ``named_parameters`` deduplicates shared submodules
by identity, so siamese weight sharing is counted and serialized once.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
            self._children.pop(name, None)
        elif isinstance(value, Module):
            self._children[name] = value
            self._params.pop(name, None)
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # ------------------------------------------------------------- traversal

    def named_parameters(self, prefix: str = "", memo=None):
        if memo is None:
            memo = set()
        for name, p in self._params.items():
            if id(p) not in memo:
                memo.add(id(p))
                yield prefix + name, p
        for name, child in self._children.items():
            if id(child) in memo:
                continue
            memo.add(id(child))
            yield from child.named_parameters(prefix + name + ".", memo)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = "", memo=None):
        if memo is None:
            memo = set()
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self._children.items():
            if id(child) in memo:
                continue
            memo.add(id(child))
            yield from child.named_buffers(prefix + name + ".", memo)

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    # ----------------------------------------------------------------- state

    def state_dict(self) -> dict:
        state = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(
                f"state dict mismatch; missing={missing}, unexpected={unexpected}")
        for name, p in self.named_parameters():
            src = state[name]
            if p.data.shape != src.shape:
                raise ValueError(
                    f"parameter {name}: shape {p.data.shape} != stored {src.shape}")
            p.data = src.astype(p.data.dtype, copy=True)
        self._load_buffers(state, "")

    def _load_buffers(self, state, prefix):
        for name in self._buffers:
            full = prefix + name
            buf = getattr(self, name)
            self._buffers[name] = state[full].astype(buf.dtype, copy=True)
            object.__setattr__(self, name, self._buffers[name])
        for name, child in self._children.items():
            child._load_buffers(state, prefix + name + ".")

    # ------------------------------------------------------------------ misc

    def train(self, flag: bool = True):
        object.__setattr__(self, "training", flag)
        for child in self._children.values():
            child.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def summary(self) -> str:
        lines = [f"{name:<48s} {str(p.data.shape):<20s} {p.data.size:>10d}"
                 for name, p in self.named_parameters()]
        lines.append(f"{'total':<48s} {'':<20s} {self.num_parameters():>10d}")
        return "\n".join(lines)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


# ------------------------------------------------------------------ layers

class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0,
                 groups=1, bias=True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_ch // groups) * kernel * kernel
        self.weight = Parameter(
            rng.standard_normal((out_ch, in_ch // groups, kernel, kernel))
            / np.sqrt(fan_in))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, groups=self.groups)


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, bias=True):
        super().__init__()
        self.stride = stride
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(
            rng.standard_normal((in_ch, out_ch, kernel, kernel))
            / np.sqrt(fan_in))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, stride=self.stride)


class BatchNorm2d(Module):
    """Per-channel batch normalization over (B, H, W)."""

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        gamma = self.weight.reshape(1, -1, 1, 1)
        beta = self.bias.reshape(1, -1, 1, 1)
        if self.training:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
            unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
            m = self.momentum
            self._buffers["running_mean"] = (
                (1 - m) * self.running_mean + m * mu.data.reshape(-1))
            self._buffers["running_var"] = (
                (1 - m) * self.running_var + m * unbiased)
            object.__setattr__(self, "running_mean", self._buffers["running_mean"])
            object.__setattr__(self, "running_var", self._buffers["running_var"])
            norm = centered / T.sqrt(var + self.eps)
        else:
            mu = self.running_mean.reshape(1, -1, 1, 1)
            var = self.running_var.reshape(1, -1, 1, 1)
            norm = (x - mu) / np.sqrt(var + self.eps)
        return norm * gamma + beta


class ChannelLayerNorm(Module):
    """Layer normalization across the channel axis of a (B, C, H, W) map."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x):
        mu = x.mean(axis=1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=1, keepdims=True)
        norm = centered / T.sqrt(var + self.eps)
        return norm * self.weight.reshape(1, -1, 1, 1) + self.bias.reshape(1, -1, 1, 1)


class GRN(Module):
    """Global response normalization with learnable scale/shift and residual.

    Divides each channel's spatial L2 norm by the cross-channel mean of
    those norms, multiplies the input by that ratio, and applies zero-
    initialized affine parameters so the layer starts as the identity.
    """

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.zeros(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x):
        g = T.sqrt((x * x).sum(axis=(2, 3), keepdims=True))
        n = g / (g.mean(axis=1, keepdims=True) + self.eps)
        scaled = x * n * self.weight.reshape(1, -1, 1, 1)
        return scaled + self.bias.reshape(1, -1, 1, 1) + x
