"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

H = 1e-6


def rel_err(num, ana, floor=1e-7):
    return abs(num - ana) / max(abs(num), abs(ana), floor)


def fd_scalar(f, x, grad, rng, probes=20):
    """Worst relative error of ``grad`` against central differences of scalar ``f`` at ``x``."""
    worst = 0.0
    for _ in range(probes):
        j = tuple(int(rng.integers(0, s)) for s in x.shape)
        a, b = x.copy(), x.copy()
        a[j] += H
        b[j] -= H
        num = (f(a) - f(b)) / (2 * H)
        worst = max(worst, rel_err(num, grad[j]))
    return worst


def fd_network(forward, backward, x, store, rng, probes=20):
    """Check parameter and input gradients of ``sum(forward(x) * g)`` for random ``g``."""
    y, cache = forward(x)
    g = rng.standard_normal(y.shape)
    dx, grads = backward(g, cache)

    def loss():
        return float(np.sum(forward(x)[0] * g))

    worst = 0.0
    for i in rng.choice(store.size, min(probes, store.size), replace=False):
        v = store.values[i]
        store.values[i] = v + H
        a = loss()
        store.values[i] = v - H
        b = loss()
        store.values[i] = v
        worst = max(worst, rel_err((a - b) / (2 * H), grads[i]))
    for _ in range(probes):
        j = tuple(int(rng.integers(0, s)) for s in x.shape)
        v = x[j]
        x[j] = v + H
        a = loss()
        x[j] = v - H
        b = loss()
        x[j] = v
        worst = max(worst, rel_err((a - b) / (2 * H), dx[j]))
    return worst
