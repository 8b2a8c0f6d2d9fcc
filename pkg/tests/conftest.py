"""Shared helpers: central-difference gradient checking in float64."""

import numpy as np


def num_grad(f, x, h=1e-5):
    """Central-difference gradient of the scalar function f with respect to
    x, which is perturbed in place (x must own contiguous storage)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b):
    """Max absolute difference, normalized by the largest magnitude seen.

    The 1e-3 floor keeps finite-difference rounding noise (~1e-10) from
    dominating when a gradient is genuinely zero, e.g. the attention key
    bias, which cancels inside the softmax.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-3)
    return float(np.max(np.abs(a - b))) / denom


def randomize_params(store, rng, scale=0.3):
    """Overwrite every parameter (including zero-initialized output
    projections) so gradient checks exercise all paths."""
    for name in store.names():
        store[name][...] = rng.normal(0.0, scale, store[name].shape)
