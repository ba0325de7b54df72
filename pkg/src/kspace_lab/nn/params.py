"""Flat, manifest-ordered parameter storage with Adam state."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


class ParamStore:
    """Parameters for one network, laid out in a single flat float64 vector.

    ``manifest`` fixes both the flat layout and the serialization order.
    ``buffers`` holds non-trainable state (batch-norm running statistics).
    """

    def __init__(self, manifest, buffers=None):
        self.manifest = [(str(name), tuple(int(s) for s in shape)) for name, shape in manifest]
        self._slices = {}
        off = 0
        for name, shape in self.manifest:
            if name in self._slices:
                raise ValueError(f"duplicate parameter name {name!r}")
            size = int(np.prod(shape))
            self._slices[name] = (off, off + size, shape)
            off += size
        self.size = off
        self.values = np.zeros(off)
        self.adam_m = np.zeros(off)
        self.adam_v = np.zeros(off)
        self.step = 0
        self.buffers = {k: np.array(v, dtype=np.float64) for k, v in (buffers or {}).items()}

    def __contains__(self, name):
        return name in self._slices

    def __getitem__(self, name) -> np.ndarray:
        return self.view(self.values, name)

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        a, b, shape = self._slices[name]
        return flat[a:b].reshape(shape)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    def copy(self) -> ParamStore:
        other = ParamStore(self.manifest, self.buffers)
        other.values[:] = self.values
        other.adam_m[:] = self.adam_m
        other.adam_v[:] = self.adam_v
        other.step = self.step
        return other

    def snapshot(self) -> ParamStore:
        """Read-only copy for sharing with inference threads."""
        other = self.copy()
        other.values.flags.writeable = False
        for v in other.buffers.values():
            v.flags.writeable = False
        return other

    def check_grads(self, grads: np.ndarray) -> None:
        if grads.shape != (self.size,):
            raise ShapeError(f"gradient length {grads.shape} != parameter count {self.size}")


def adam_step(store: ParamStore, grads, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam update, in place; returns ``store``."""
    grads = np.asarray(grads, dtype=np.float64)
    store.check_grads(grads)
    store.step += 1
    t = store.step
    store.adam_m *= beta1
    store.adam_m += (1 - beta1) * grads
    store.adam_v *= beta2
    store.adam_v += (1 - beta2) * grads * grads
    m_hat = store.adam_m / (1 - beta1**t)
    v_hat = store.adam_v / (1 - beta2**t)
    store.values -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return store
