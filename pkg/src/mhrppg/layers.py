"""Parameterised layers over :mod:`mhrppg.tensor_core`.

Layers are stateless with respect to activations: ``forward`` returns
``(y, cache)`` and ``backward(grad, cache)`` returns the input gradient while
accumulating parameter gradients into ``Parameter.grad``. That lets one layer
instance be applied more than once per graph (the shared bottleneck in the
channel-feature branch).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc


@dataclass
class Parameter:
    data: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0


class Layer:
    training = True

    def params(self) -> dict:
        """Trainable parameters keyed by local name."""
        return {}

    def buffers(self) -> dict:
        """Non-trainable persistent arrays (running statistics)."""
        return {}

    def children(self) -> dict:
        return {}

    def named_params(self, prefix=""):
        out = {f"{prefix}{k}": v for k, v in self.params().items()}
        for name, child in self.children().items():
            out.update(child.named_params(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix=""):
        out = {f"{prefix}{k}": v for k, v in self.buffers().items()}
        for name, child in self.children().items():
            out.update(child.named_buffers(f"{prefix}{name}."))
        return out

    def train(self, mode=True):
        self.training = mode
        for child in self.children().values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)


class Conv3d(Layer):
    def __init__(self, spec: tc.ConvSpec, rng: np.random.Generator, bias=True):
        self.spec = spec
        fan_in = spec.in_channels * int(np.prod(spec.kernel))
        self.weight = Parameter(tc.kaiming_normal(
            rng, (spec.out_channels, spec.in_channels) + spec.kernel, fan_in))
        self.bias = Parameter(np.zeros(spec.out_channels)) if bias else None

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def forward(self, x):
        b = None if self.bias is None else self.bias.data
        return tc.conv3d(x, self.weight.data, b, self.spec), x

    def backward(self, g, x):
        gx, gw, gb = tc.conv3d_backward(g, x, self.weight.data, self.spec)
        self.weight.grad += gw
        if self.bias is not None:
            self.bias.grad += gb
        return gx


class TransposedConv3d(Layer):
    def __init__(self, spec: tc.ConvSpec, rng: np.random.Generator, bias=True):
        self.spec = spec
        fan_in = spec.in_channels * int(np.prod(spec.kernel)) // int(np.prod(spec.stride))
        self.weight = Parameter(tc.kaiming_normal(
            rng, (spec.in_channels, spec.out_channels) + spec.kernel, max(fan_in, 1)))
        self.bias = Parameter(np.zeros(spec.out_channels)) if bias else None

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def forward(self, x):
        b = None if self.bias is None else self.bias.data
        return tc.transposed_conv3d(x, self.weight.data, self.spec, b), x

    def backward(self, g, x):
        gx, gw, gb = tc.transposed_conv3d_backward(g, x, self.weight.data, self.spec)
        self.weight.grad += gw
        if self.bias is not None:
            self.bias.grad += gb
        return gx


class BatchNorm3d(Layer):
    def __init__(self, channels: int, eps=1e-5, momentum=0.1):
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.state = tc.BatchNormState.fresh(channels, momentum)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}

    def forward(self, x):
        mode = "train" if self.training else "eval"
        return tc.batchnorm(x, self.gamma.data, self.beta.data, self.eps, mode, self.state)

    def backward(self, g, cache):
        gx, gg, gb = tc.batchnorm_backward(g, cache)
        self.gamma.grad += gg
        self.beta.grad += gb
        return gx


class Activation(Layer):
    def __init__(self, fn: str):
        self.fn = fn

    def forward(self, x):
        return tc.elementwise(x, self.fn), x

    def backward(self, g, x):
        return tc.elementwise_backward(g, x, self.fn)


class Pool3d(Layer):
    def __init__(self, kind, kernel, stride=None):
        self.kind, self.kernel, self.stride = kind, kernel, stride

    def forward(self, x):
        return tc.pool3d(x, self.kind, self.kernel, self.stride, return_cache=True)

    def backward(self, g, cache):
        return tc.pool3d_backward(g, cache)


class Sequential(Layer):
    def __init__(self, *layers):
        self.layers = list(layers)

    def children(self):
        return {str(i): layer for i, layer in enumerate(self.layers)}

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, g, caches):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            g = layer.backward(g, c)
        return g


def conv_bn_relu(cin, cout, kernel, rng):
    # bias is redundant in front of batchnorm
    return [Conv3d(tc.ConvSpec.same(cin, cout, kernel), rng, bias=False), BatchNorm3d(cout),
            Activation("relu")]
