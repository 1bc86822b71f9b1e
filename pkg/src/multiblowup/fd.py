"""High-order finite differences on uniform segments."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def fornberg_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for derivatives 0..m at ``z`` on nodes ``x``.

    Fornberg's recursion; returns an array of shape ``(m+1, len(x))``.
    """
    n = len(x)
    c = np.zeros((m + 1, n))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


@lru_cache(maxsize=None)
def _stencil(offset: int, width: int, order: int) -> tuple:
    """Weights at node ``offset`` of a ``width``-point unit-spaced stencil."""
    w = fornberg_weights(float(offset), np.arange(width, dtype=float), order)
    return tuple(map(tuple, w[1:]))


def uniform_derivatives(
    f: np.ndarray, h: float, even_left: bool = False, width: int = 7
) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of samples ``f`` on a uniform segment.

    Centered ``width``-point stencils in the interior, shifted one-sided
    stencils of the same width near the ends.  With ``even_left`` the
    samples are extended evenly across the left end (``f(-r) = f(r)``).
    """
    f = np.asarray(f)
    half = width // 2
    if even_left:
        ext = np.concatenate([f[half:0:-1], f])
        shift = half
    else:
        ext = f
        shift = 0
    n = len(f)
    m_ext = len(ext)
    d1 = np.zeros(n, dtype=ext.dtype)
    d2 = np.zeros(n, dtype=ext.dtype)
    w1c, w2c = _stencil(half, width, 2)
    # interior (centered) via sliding sums
    lo = half
    hi = m_ext - half
    for k in range(width):
        seg = ext[k : k + hi - lo]
        d1_part = w1c[k] * seg
        d2_part = w2c[k] * seg
        idx = np.arange(lo, hi) - shift
        valid = idx >= 0
        d1[idx[valid]] += d1_part[valid]
        d2[idx[valid]] += d2_part[valid]
    # one-sided near ends
    for e in range(m_ext):
        if lo <= e < hi:
            continue
        i = e - shift
        if i < 0:
            continue
        start = 0 if e < lo else m_ext - width
        w1, w2 = _stencil(e - start, width, 2)
        vals = ext[start : start + width]
        d1[i] = np.dot(w1, vals)
        d2[i] = np.dot(w2, vals)
    return d1 / h, d2 / (h * h)
