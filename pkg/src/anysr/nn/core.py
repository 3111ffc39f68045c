"""Parameters, a small module system and the layers LevelPyramidNet is built from.

Modules cache what they need during ``forward`` and consume it in
``backward``, which accumulates parameter gradients and returns the gradient
with respect to the module input.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from contextlib import contextmanager

import numpy as np

from . import functional as F


_RECORDING = True


@contextmanager
def inference_mode():
    """Skip caching activations for backward; 3x3 convs also avoid the 9x im2col buffer."""
    global _RECORDING
    previous, _RECORDING = _RECORDING, False
    try:
        yield
    finally:
        _RECORDING = previous


def recording() -> bool:
    return _RECORDING


_KINK_LOG: list | None = None


@contextmanager
def kink_log():
    """Collect the sign pattern of every ReLU input evaluated inside the block."""
    global _KINK_LOG
    previous, _KINK_LOG = _KINK_LOG, []
    try:
        yield _KINK_LOG
    finally:
        _KINK_LOG = previous


class Parameter:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = np.ascontiguousarray(value, dtype=np.float32)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0

    def astype(self, dtype):
        """Recast value and all buffers (used to run gradient checks in float64)."""
        self.value = self.value.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.m = self.m.astype(dtype)
        self.v = self.v.astype(dtype)


class Module:
    def __init__(self):
        self._params: OrderedDict[str, Parameter] = OrderedDict()
        self._children: OrderedDict[str, Module] = OrderedDict()

    def add_param(self, name: str, value: np.ndarray) -> Parameter:
        p = Parameter(value)
        self._params[name] = p
        return p

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> "OrderedDict[str, Parameter]":
        return OrderedDict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.astype(dtype)
        return self


class Conv2d(Module):
    """Zero-padded ("same") convolution with He-uniform fan-in initialization."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, init_gain: float = 1.0):
        super().__init__()
        if k not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {k}")
        self.cin, self.cout, self.k = cin, cout, k
        bound = init_gain * math.sqrt(6.0 / (cin * k * k))
        self.weight = self.add_param("weight", rng.uniform(-bound, bound, (cout, cin, k, k)))
        self.bias = self.add_param("bias", np.zeros(cout))
        self._cache = None

    def forward(self, x):
        F._check_conv(x, self.weight.value)
        if not _RECORDING and self.k > 1:
            return F.conv2d_shifted(x, self.weight.value, self.bias.value)
        cols = F.im2col(x, self.k)
        if _RECORDING:
            self._cache = (cols, x.shape)
        return F.conv2d_from_cols(cols, self.weight.value, self.bias.value, x.shape[2:])

    def backward(self, grad_out):
        cols, x_shape = self._cache
        self._cache = None
        gx, gw, gb = F.conv2d_backward_from_cols(cols, x_shape, self.weight.value, grad_out)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class ReLU(Module):
    def forward(self, x):
        self._x = x if _RECORDING else None
        if _KINK_LOG is not None:
            _KINK_LOG.append(np.packbits(x > 0).tobytes())
        return F.relu_forward(x)

    def backward(self, grad_out):
        g = F.relu_backward(self._x, grad_out)
        self._x = None
        return g


class ChannelAttention(Module):
    """Per-channel gating from pooled statistics: 1x1 reduce, ReLU, 1x1 expand, sigmoid."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"reduction {reduction} does not divide {channels} channels")
        hidden = channels // reduction
        self.reduce = self.add_child("reduce", Conv2d(channels, hidden, 1, rng))
        self.expand = self.add_child("expand", Conv2d(hidden, channels, 1, rng))
        self.act = ReLU()

    def attention(self, x):
        pooled = F.global_avg_pool_forward(x)
        return F.sigmoid_forward(self.expand.forward(self.act.forward(self.reduce.forward(pooled))))

    def forward(self, x):
        s = self.attention(x)
        self._cache = (x, s) if _RECORDING else None
        return F.mul_forward(x, s)

    def backward(self, grad_out):
        x, s = self._cache
        self._cache = None
        gx, gs = F.mul_backward(x, s, grad_out)
        g = F.sigmoid_backward(s, gs)
        g = self.reduce.backward(self.act.backward(self.expand.backward(g)))
        return gx + F.global_avg_pool_backward(x.shape, g)


class SpatialAttention(Module):
    """Per-pixel gating: 1x1 conv, ReLU, 1x1 conv to one channel, sigmoid, broadcast over channels."""

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.reduce = self.add_child("reduce", Conv2d(channels, hidden, 1, rng))
        self.expand = self.add_child("expand", Conv2d(hidden, 1, 1, rng))
        self.act = ReLU()

    def attention(self, x):
        return F.sigmoid_forward(self.expand.forward(self.act.forward(self.reduce.forward(x))))

    def forward(self, x):
        m = self.attention(x)
        self._cache = (x, m) if _RECORDING else None
        return F.mul_forward(x, m)

    def backward(self, grad_out):
        x, m = self._cache
        self._cache = None
        gx, gm = F.mul_backward(x, m, grad_out)
        g = F.sigmoid_backward(m, gm)
        return gx + self.reduce.backward(self.act.backward(self.expand.backward(g)))
