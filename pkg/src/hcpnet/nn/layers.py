"""Layer specs, parameters and the stateful layer wrappers."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from . import functional as F

KINDS = ("conv", "relu", "maxpool", "fc", "dropout", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    out: int = 0
    ratio: float = 0.0
    group: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "maxpool") and (self.kernel < 1 or self.stride < 1):
            raise ConfigError("kernel size and stride must be >= 1")
        if self.kind in ("conv", "fc") and self.out < 1:
            raise ConfigError(f"{self.kind} layer needs a positive output width")
        if not 0 <= self.ratio < 1:
            raise ConfigError("drop ratio must lie in [0, 1)")


@dataclass
class Parameter:
    value: np.ndarray
    group: int = 0
    name: str = ""
    grad: np.ndarray = field(default=None, repr=False)
    momentum_buf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum_buf is None:
            self.momentum_buf = np.zeros_like(self.value)
        if not (self.value.shape == self.grad.shape == self.momentum_buf.shape):
            raise ShapeError(f"parameter {self.name}: value/grad/momentum shapes differ")


class Layer:
    params: tuple = ()

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Conv(Layer):
    def __init__(self, spec, weight, bias):
        self.spec = spec
        self.weight, self.bias = weight, bias
        self.params = (weight, bias)
        self.input_grad = True

    def forward(self, x, train=False, rng=None):
        out, self._cache = F.conv2d_forward(
            x, self.weight.value, self.bias.value, self.spec.stride, self.spec.pad
        )
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._cache, self.input_grad)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class FullyConnected(Layer):
    def __init__(self, spec, weight, bias):
        self.spec = spec
        self.weight, self.bias = weight, bias
        self.params = (weight, bias)

    def forward(self, x, train=False, rng=None):
        out, self._cache = F.fc_forward(x, self.weight.value, self.bias.value)
        return out

    def backward(self, dout):
        dx, dw, db = F.fc_backward(dout, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class ReLU(Layer):
    def __init__(self, spec):
        self.spec = spec

    def forward(self, x, train=False, rng=None):
        out, self._mask = F.relu_forward(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._mask)


class MaxPool(Layer):
    def __init__(self, spec):
        self.spec = spec

    def forward(self, x, train=False, rng=None):
        out, self._cache = F.maxpool2d_forward(x, self.spec.kernel, self.spec.stride)
        return out

    def backward(self, dout):
        return F.maxpool2d_backward(dout, self._cache)


class Dropout(Layer):
    def __init__(self, spec):
        self.spec = spec

    def forward(self, x, train=False, rng=None):
        out, self._mask = F.dropout_forward(x, self.spec.ratio, train, rng)
        return out

    def backward(self, dout):
        return F.dropout_backward(dout, self._mask)


class Softmax(Layer):
    def __init__(self, spec):
        self.spec = spec

    def forward(self, x, train=False, rng=None):
        out, self._p = F.softmax_forward(x)
        return out

    def backward(self, dout):
        return F.softmax_backward(dout, self._p)
