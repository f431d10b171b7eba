"""Piecewise-cubic (Keys, a = -1/2) interpolation with edge-clamped taps."""

from __future__ import annotations

import math

import numba
import numpy as np

KEYS_A = -0.5


@numba.njit(cache=True)
def keys_kernel(x):
    x = abs(x)
    a = KEYS_A
    if x <= 1.0:
        return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    if x < 2.0:
        return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    return 0.0


@numba.njit(cache=True)
def keys_weights(t):
    """Weights of taps at floor offsets -1, 0, 1, 2 for fraction t in [0, 1)."""
    w = np.empty(4)
    for o in range(4):
        w[o] = keys_kernel(t - (o - 1))
    return w


def split_offset(d: float) -> tuple[int, float]:
    k = math.floor(d)
    return int(k), d - k


def resample_columns(img: np.ndarray, offset: float) -> np.ndarray:
    """Sample ``img`` at columns ``v + offset`` for every column ``v``."""
    img = np.asarray(img, dtype=np.float64)
    n = img.shape[1]
    k, t = split_offset(offset)
    if t == 0.0:
        idx = np.clip(np.arange(n) + k, 0, n - 1)
        return img[:, idx]
    w = keys_weights(t)
    out = np.zeros_like(img)
    for o in range(4):
        idx = np.clip(np.arange(n) + k + o - 1, 0, n - 1)
        out += w[o] * img[:, idx]
    return out


def sample2d(img: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Separable Keys interpolation of ``img`` at (row ``y``, column ``x``)."""
    img = np.asarray(img, dtype=np.float64)
    m, n = img.shape
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    ky = np.floor(y).astype(int)
    kx = np.floor(x).astype(int)
    ty = y - ky
    tx = x - kx
    out = np.zeros(np.broadcast(y, x).shape)
    for oy in range(-1, 3):
        wy = np.vectorize(keys_kernel)(ty - oy)
        rows = np.clip(ky + oy, 0, m - 1)
        for ox in range(-1, 3):
            wx = np.vectorize(keys_kernel)(tx - ox)
            cols = np.clip(kx + ox, 0, n - 1)
            out += wy * wx * img[rows, cols]
    return out
