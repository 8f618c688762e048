# -*- coding: utf-8 -*-
"""Central finite differences for the backward pass checks (64-bit)."""
import numpy as np

H = 1e-4


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """d f() / d x, x is perturbed in place and restored."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    den = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)
