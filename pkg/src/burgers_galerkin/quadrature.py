"""Composite Gauss rules on (0, 1) with breakpoint-aligned panels."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

DEFAULT_ORDER = 8


@lru_cache(maxsize=32)
def _legendre(order: int):
    return leggauss(order)


def composite_gauss_legendre(breaks, panels_per_unit: float, order: int = DEFAULT_ORDER):
    """Nodes and weights of a composite Gauss-Legendre rule.

    Every interval between consecutive ``breaks`` is split into
    ``ceil(length * panels_per_unit)`` equal panels, so that kinks of the
    integrand placed at breakpoints never fall inside a panel.
    """
    g, w = _legendre(order)
    breaks = np.unique(np.asarray(breaks, dtype=float))
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(np.ceil((b - a) * panels_per_unit - 1e-12)))
        edges = np.linspace(a, b, n + 1)
        lo, hi = edges[:-1, None], edges[1:, None]
        xs.append(((lo + hi) / 2 + (hi - lo) / 2 * g).ravel())
        ws.append(((hi - lo) / 2 * w).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def singular_panel_rule(h: float, exponent: float, order: int = DEFAULT_ORDER):
    """Gauss-Jacobi rule for ``int_0^h r^exponent g(r) dr`` with smooth ``g``.

    Returns nodes ``r`` and weights that already contain ``r^exponent``.
    """
    t, w = roots_jacobi(order, 0.0, exponent)
    r = h * (1.0 + t) / 2.0
    return r, w * (h / 2.0) ** (1.0 + exponent)


def radial_rule(exponent: float, panels: int, order: int = DEFAULT_ORDER):
    """Rule for ``int_0^1 r^exponent g(r) dr``: Gauss-Jacobi first panel, Gauss-Legendre after."""
    h = 1.0 / panels
    r0, w0 = singular_panel_rule(h, exponent, order)
    if panels == 1:
        return r0, w0
    r1, w1 = composite_gauss_legendre([h, 1.0], (panels - 1) / (1.0 - h), order)
    return np.concatenate([r0, r1]), np.concatenate([w0, w1 * r1**exponent])
