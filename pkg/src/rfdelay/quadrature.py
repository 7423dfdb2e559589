"""Breakpoint-aware composite Gauss-Legendre rules for the distributed term

    N(t, psi) = int_{-Delta}^{0} G(t, s, psi(s)) ds.

Cells are the gaps between consecutive breakpoints of psi, each gap wider
than Delta/subcells split into equal parts, so every cell sees a single
polynomial piece and no cell is wider than Delta/subcells.  Gauss
nodes are interior points, therefore point marks on psi are never sampled.
"""

from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .history import MERGE_RTOL

DEFAULT_ORDER = 8
ESCALATED_ORDER = 12
ESCALATION_TOL = 1e-11
SUBCELLS = 32


@lru_cache(maxsize=None)
def gauss_rule(q):
    if not 1 <= q <= 64:
        raise ValueError("quadrature order out of range")
    x, w = leggauss(q)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def split_gaps(edges, width):
    """Refine sorted edges so that no gap exceeds `width` (equal parts per gap)."""
    gaps = np.diff(edges)
    m = np.maximum(1, np.ceil(gaps / width * (1.0 - 1e-12))).astype(int)
    if np.all(m == 1):
        return edges
    lo = np.repeat(edges[:-1], m)
    step = np.repeat(gaps / m, m)
    k = np.arange(m.sum()) - np.repeat(np.cumsum(m) - m, m)
    return np.concatenate([lo + k * step, edges[-1:]])


def cell_edges(a, b, breakpoints=(), subcells=SUBCELLS):
    """Breakpoints inside [a, b] with the gaps split to width <= (b - a)/subcells."""
    bp = np.asarray(breakpoints, float)
    bp = bp[(bp > a) & (bp < b)]
    edges = np.concatenate([[a], np.sort(bp), [b]])
    keep = np.diff(edges) > MERGE_RTOL * (b - a)
    edges = np.concatenate([edges[:1], edges[1:][keep]])
    edges[-1] = b
    return split_gaps(edges, (b - a) / subcells)


def composite_nodes(edges, q):
    """Nodes and weights of the q-point rule on every cell given by `edges`."""
    x, w = gauss_rule(q)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (lo + hi) + half * x).ravel()
    weights = (half * w).ravel()
    return nodes, weights


def _check_order(q):
    if not 2 <= int(q) <= 16:
        raise ValueError("quadrature order must lie in 2..16")


def distributed_eval(kernel, t, psi, order=DEFAULT_ORDER, subcells=SUBCELLS):
    """Composite Gauss-Legendre approximation of N(t, psi); returns (p,).

    Linear kernels integrate K(t, s) psi(s) with the same rule.
    """
    _check_order(order)
    return _eval(kernel, t, psi, order, subcells)


def _eval(kernel, t, psi, order, subcells):
    if psi.t_end != 0.0:
        raise ValueError("psi must live on [-Delta, 0]")
    if kernel.is_zero:
        return np.zeros(kernel.p)
    edges = cell_edges(psi.t_start, 0.0, psi.breakpoints[1:-1], subcells)
    s, w = composite_nodes(edges, order)
    vals = kernel(t, s, psi.ae(s))
    if not np.all(np.isfinite(vals)):
        raise ArithmeticError("non-finite integrand in the distributed term")
    return w @ vals


def quadrature_error_probe(kernel, t, psi, order=DEFAULT_ORDER, subcells=SUBCELLS):
    """Componentwise |N_q - N_{q+2}|."""
    _check_order(order)
    a = _eval(kernel, t, psi, order, subcells)
    b = _eval(kernel, t, psi, order + 2, subcells)
    return np.abs(a - b)
