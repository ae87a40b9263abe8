"""Quadrature rules on the reference triangle and on line segments.

Reference triangle is {(x, y): x, y >= 0, x + y <= 1}.  Triangle rules are
returned as barycentric points ``(n, 3)`` and weights summing to one, so an
integral over an element is ``area * sum(w * f)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


def _orbit3(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit6(a: float, b: float) -> list[tuple[float, float, float]]:
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


# Dunavant's symmetric rules (positive weights, interior points).
_DUNAVANT = {
    1: ([(1 / 3, 1 / 3, 1 / 3)], [1.0]),
    2: (_orbit3(1 / 6), [1 / 3] * 3),
    4: (
        _orbit3(0.445948490915965) + _orbit3(0.091576213509771),
        [0.223381589678011] * 3 + [0.109951743655322] * 3,
    ),
    6: (
        _orbit3(0.249286745170910)
        + _orbit3(0.063089014491502)
        + _orbit6(0.053145049844817, 0.310352451033784),
        [0.116786275726379] * 3 + [0.050844906370207] * 3 + [0.082851075618374] * 6,
    ),
}


def _collapsed_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    # Conical product (Stroud) rule: Gauss-Jacobi(1,0) x Gauss-Legendre.
    n = degree // 2 + 1
    xa, wa = roots_jacobi(n, 1.0, 0.0)
    xb, wb = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (xa + 1.0)  # collapsed direction
    r = 0.5 * (xb + 1.0)
    pts, wts = [], []
    for si, wi in zip(s, wa):
        for ri, wj in zip(r, wb):
            x = (1.0 - si) * ri
            y = si
            pts.append((1.0 - x - y, x, y))
            wts.append(wi * wj)
    w = np.array(wts)
    return np.array(pts), w / w.sum()


@lru_cache(maxsize=None)
def _triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    for d in sorted(_DUNAVANT):
        if d >= degree:
            pts, wts = _DUNAVANT[d]
            w = np.array(wts)
            return np.array(pts), w / w.sum()
    return _collapsed_rule(degree)


def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and normalized weights exact for polynomials of ``degree``."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    pts, w = _triangle_rule(max(int(degree), 1))
    return pts.copy(), w.copy()


def gauss_line(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [0, 1] with weights summing to one."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
