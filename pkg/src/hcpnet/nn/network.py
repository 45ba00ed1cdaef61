"""Sequential network assembled from :class:`LayerSpec` records."""

import numpy as np

from ..errors import ShapeError
from .layers import (
    Conv,
    Dropout,
    FullyConnected,
    MaxPool,
    Parameter,
    ReLU,
    Softmax,
)


def param_shapes(specs, input_shape):
    """Shapes of (weight, bias) per parametrised layer, plus the output shape."""
    shape = tuple(input_shape)
    shapes = []
    for spec in specs:
        if spec.kind == "conv":
            c, h, w = shape
            shapes.append(((spec.out, c, spec.kernel, spec.kernel), (spec.out,)))
            oh = (h + 2 * spec.pad - spec.kernel) // spec.stride + 1
            ow = (w + 2 * spec.pad - spec.kernel) // spec.stride + 1
            if oh < 1 or ow < 1:
                raise ShapeError(f"conv layer collapses spatial size at input {shape}")
            shape = (spec.out, oh, ow)
        elif spec.kind == "maxpool":
            c, h, w = shape
            if spec.kernel > h or spec.kernel > w:
                raise ShapeError(f"pool window {spec.kernel} exceeds input {shape}")
            shape = (c, (h - spec.kernel) // spec.stride + 1, (w - spec.kernel) // spec.stride + 1)
        elif spec.kind == "fc":
            nin = int(np.prod(shape))
            shapes.append(((spec.out, nin), (spec.out,)))
            shape = (spec.out,)
    return shapes, shape


class Network:
    """Feed-forward stack. Parameters are owned here and shared by all calls.

    ``input_grad`` controls whether :meth:`backward` returns the gradient with
    respect to the input (skipped by default; it costs a col2im pass).
    ``values`` optionally supplies the parameter arrays in layer order
    (weight, bias, weight, bias, ...); otherwise weights are drawn with
    ``rng`` and biases start at zero. ``init="gaussian"`` draws every weight
    from ``N(0, init_std)``; ``init="he"`` uses ``N(0, sqrt(2 / fan_in))``
    for all but the last parametrised layer, which keeps ``N(0, init_std)``.
    """

    def __init__(
        self, specs, input_shape, rng=None, values=None, dtype=np.float32, init_std=0.01,
        input_grad=False, init="gaussian",
    ):
        self.specs = list(specs)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.dtype = np.dtype(dtype)
        shapes, self.output_shape = param_shapes(self.specs, self.input_shape)
        if values is None:
            if rng is None:
                raise ValueError("need an rng or explicit parameter values")
            if init not in ("gaussian", "he"):
                raise ValueError(f"unknown init scheme {init!r}")
            values = []
            for i, (wshape, bshape) in enumerate(shapes):
                std = init_std
                if init == "he" and i < len(shapes) - 1:
                    std = np.sqrt(2.0 / np.prod(wshape[1:]))
                values.append(rng.normal(0.0, std, size=wshape))
                values.append(np.zeros(bshape))
        values = list(values)
        if len(values) != 2 * len(shapes):
            raise ShapeError(f"expected {2 * len(shapes)} parameter arrays, got {len(values)}")

        self.layers = []
        self.params = []
        it = iter(values)
        pi = 0
        for li, spec in enumerate(self.specs):
            if spec.kind in ("conv", "fc"):
                wshape, bshape = shapes[pi]
                wv, bv = np.asarray(next(it)), np.asarray(next(it))
                if wv.shape != wshape or bv.shape != bshape:
                    raise ShapeError(
                        f"layer {li}: parameter shapes {wv.shape}/{bv.shape}, expected {wshape}/{bshape}"
                    )
                wp = Parameter(np.array(wv, dtype=self.dtype), spec.group, f"{spec.kind}{li}.weight")
                bp = Parameter(np.array(bv, dtype=self.dtype), spec.group, f"{spec.kind}{li}.bias")
                self.params += [wp, bp]
                cls = Conv if spec.kind == "conv" else FullyConnected
                self.layers.append(cls(spec, wp, bp))
                pi += 1
            else:
                cls = {"relu": ReLU, "maxpool": MaxPool, "dropout": Dropout, "softmax": Softmax}[spec.kind]
                self.layers.append(cls(spec))
        # the first conv's input gradient is only needed for input-space checks
        if self.layers and isinstance(self.layers[0], Conv):
            self.layers[0].input_grad = input_grad

    @property
    def num_outputs(self):
        return self.output_shape[0]

    def _stop(self, logits):
        if logits and self.specs and self.specs[-1].kind == "softmax":
            return len(self.layers) - 1
        return len(self.layers)

    def forward(self, x, train=False, rng=None, logits=False):
        """Run the stack on a batch (N, C, H, W) or a single (C, H, W) input.

        ``logits=True`` stops before a trailing softmax layer.
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-3:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[-3:]} does not match network input {self.input_shape}")
        self._ran = self._stop(logits)
        for layer in self.layers[: self._ran]:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def backward(self, dout):
        """Backpropagate from the output of the last forward; grads accumulate."""
        d = np.asarray(dout, dtype=self.dtype)
        for layer in reversed(self.layers[: self._ran]):
            d = layer.backward(d)
            if d is None:
                break
        return d

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0

    def parameter_values(self):
        return [p.value for p in self.params]
