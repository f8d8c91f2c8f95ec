"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np


def central_fd(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at flat ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Largest componentwise relative error, with an absolute floor for near-zero entries."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def mlp_oracle(layers, x, output_activation):
    """Straight-line forward pass written with explicit loops over units."""
    h = [float(v) for v in x]
    for k, (w, b) in enumerate(layers):
        out = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for i in range(w.shape[0]):
                s += h[i] * float(w[i, j])
            last = k == len(layers) - 1
            out.append(np.tanh(s) if (not last or output_activation == "tanh") else s)
        h = out
    return np.array(h)
