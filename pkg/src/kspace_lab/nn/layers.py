"""Parameterized layers bound to names in a :class:`ParamStore`.

A layer owns no arrays; it declares its manifest entries, initializes them,
and runs forward/backward against a store. Backward accumulates parameter
gradients into a flat vector laid out like ``store.values``.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops


class Layer:
    name: str

    def manifest(self) -> list:
        return []

    def buffers(self) -> dict:
        return {}

    def init(self, store, rng) -> None:
        pass


class Conv2d(Layer):
    def __init__(self, name, cin, cout, k=3, stride=1, pad=None, bias=True, gain=math.sqrt(2.0)):
        self.name = name
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        self.pad = (k // 2) if pad is None else pad
        self.bias = bias
        self.gain = gain

    def manifest(self):
        m = [(f"{self.name}.weight", (self.cout, self.cin, self.k, self.k))]
        if self.bias:
            m.append((f"{self.name}.bias", (self.cout,)))
        return m

    def init(self, store, rng):
        fan_in = self.cin * self.k * self.k
        w = store[f"{self.name}.weight"]
        w[...] = rng.standard_normal(w.shape) * (self.gain / math.sqrt(fan_in))

    def forward(self, store, x):
        b = store[f"{self.name}.bias"] if self.bias else None
        return ops.conv2d_forward(x, store[f"{self.name}.weight"], b, self.stride, self.pad)

    def backward(self, store, grads, dout, cache):
        dx, dw, db = ops.conv2d_backward(dout, cache)
        store.view(grads, f"{self.name}.weight")[...] += dw
        if self.bias:
            store.view(grads, f"{self.name}.bias")[...] += db
        return dx


class ConvTranspose2d(Layer):
    def __init__(self, name, cin, cout, k=4, stride=2, pad=1, bias=True, gain=math.sqrt(2.0)):
        self.name = name
        self.cin, self.cout, self.k, self.stride, self.pad = cin, cout, k, stride, pad
        self.bias = bias
        self.gain = gain

    def manifest(self):
        m = [(f"{self.name}.weight", (self.cin, self.cout, self.k, self.k))]
        if self.bias:
            m.append((f"{self.name}.bias", (self.cout,)))
        return m

    def init(self, store, rng):
        # each output pixel sees about cin * (k / stride)^2 inputs
        fan_in = self.cin * (self.k / self.stride) ** 2
        w = store[f"{self.name}.weight"]
        w[...] = rng.standard_normal(w.shape) * (self.gain / math.sqrt(fan_in))

    def forward(self, store, x):
        b = store[f"{self.name}.bias"] if self.bias else None
        return ops.conv_transpose2d_forward(x, store[f"{self.name}.weight"], b, self.stride, self.pad)

    def backward(self, store, grads, dout, cache):
        dx, dw, db = ops.conv_transpose2d_backward(dout, cache)
        store.view(grads, f"{self.name}.weight")[...] += dw
        if self.bias:
            store.view(grads, f"{self.name}.bias")[...] += db
        return dx


class BatchNorm(Layer):
    def __init__(self, name, channels, momentum=0.9):
        self.name = name
        self.channels = channels
        self.momentum = momentum

    def manifest(self):
        return [(f"{self.name}.gamma", (self.channels,)), (f"{self.name}.beta", (self.channels,))]

    def buffers(self):
        return {
            f"{self.name}.running_mean": np.zeros(self.channels),
            f"{self.name}.running_var": np.ones(self.channels),
        }

    def init(self, store, rng):
        store[f"{self.name}.gamma"][...] = 1.0

    def forward(self, store, x, train=True):
        running = (store.buffers[f"{self.name}.running_mean"], store.buffers[f"{self.name}.running_var"])
        return ops.batchnorm_forward(
            x, store[f"{self.name}.gamma"], store[f"{self.name}.beta"], running, train, self.momentum
        )

    def backward(self, store, grads, dout, cache):
        dx, dg, db = ops.batchnorm_backward(dout, cache)
        store.view(grads, f"{self.name}.gamma")[...] += dg
        store.view(grads, f"{self.name}.beta")[...] += db
        return dx


class Dense(Layer):
    def __init__(self, name, cin, cout, gain=1.0):
        self.name = name
        self.cin, self.cout = cin, cout
        self.gain = gain

    def manifest(self):
        return [(f"{self.name}.weight", (self.cout, self.cin)), (f"{self.name}.bias", (self.cout,))]

    def init(self, store, rng):
        w = store[f"{self.name}.weight"]
        w[...] = rng.standard_normal(w.shape) * (self.gain / math.sqrt(self.cin))

    def forward(self, store, x):
        return x @ store[f"{self.name}.weight"].T + store[f"{self.name}.bias"], x

    def backward(self, store, grads, dout, cache):
        store.view(grads, f"{self.name}.weight")[...] += dout.T @ cache
        store.view(grads, f"{self.name}.bias")[...] += dout.sum(axis=0)
        return dout @ store[f"{self.name}.weight"]


class ConvBlock(Layer):
    """Convolution (plain or transposed), batch norm, leaky ReLU."""

    def __init__(self, conv, channels, slope):
        self.conv = conv
        self.bn = BatchNorm(conv.name + ".bn", channels)
        self.slope = slope
        self.name = conv.name

    def manifest(self):
        return self.conv.manifest() + self.bn.manifest()

    def buffers(self):
        return self.bn.buffers()

    def init(self, store, rng):
        self.conv.init(store, rng)
        self.bn.init(store, rng)

    def forward(self, store, x, train=True):
        h, c1 = self.conv.forward(store, x)
        h, c2 = self.bn.forward(store, h, train)
        h, c3 = ops.leaky_relu_forward(h, self.slope)
        return h, (c1, c2, c3)

    def backward(self, store, grads, dout, cache):
        c1, c2, c3 = cache
        d = ops.leaky_relu_backward(dout, c3)
        d = self.bn.backward(store, grads, d, c2)
        return self.conv.backward(store, grads, d, c1)
