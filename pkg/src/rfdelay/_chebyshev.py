"""Chebyshev series helpers shared by the piecewise representation and the solver.

All series live on the reference interval [-1, 1]; callers map their own
intervals onto it.
"""

from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as C

BISECTION_STEPS = 52


def clenshaw(c, x):
    """Evaluate Chebyshev series with coefficients along the last axis of `c`.

    `x` must broadcast against ``c.shape[:-1]``.
    """
    c = np.asarray(c)
    x = np.asarray(x)
    k = c.shape[-1]
    if k == 1:
        return np.broadcast_to(c[..., 0], np.broadcast(c[..., 0], x).shape).copy()
    b1 = np.zeros(np.broadcast(c[..., 0], x).shape)
    b2 = np.zeros_like(b1)
    x2 = 2.0 * x
    for j in range(k - 1, 0, -1):
        b1, b2 = c[..., j] + x2 * b1 - b2, b1
    return c[..., 0] + x * b1 - b2


@lru_cache(maxsize=None)
def lobatto(d):
    """Chebyshev points of the second kind, ascending, d+1 of them."""
    if d == 0:
        return np.array([0.0])
    x = -np.cos(np.pi * np.arange(d + 1) / d)
    x[0], x[-1] = -1.0, 1.0
    if d % 2 == 0:
        x[d // 2] = 0.0
    x.setflags(write=False)
    return x


@lru_cache(maxsize=None)
def vals_to_coeffs(d):
    """Matrix mapping values at ``lobatto(d)`` to Chebyshev coefficients."""
    if d == 0:
        m = np.ones((1, 1))
        m.setflags(write=False)
        return m
    # ascending node j corresponds to angle (d - j) * pi / d
    j = np.arange(d + 1)
    k = j[:, None]
    theta = (d - j)[None, :] * np.pi / d
    m = np.cos(k * theta) * (2.0 / d)
    m[:, 0] *= 0.5
    m[:, -1] *= 0.5
    m[0, :] *= 0.5
    m[-1, :] *= 0.5
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def coeffs_to_vals(d):
    x = lobatto(d)
    m = C.chebvander(x, d)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def cumulative_integration(d):
    """Q with (Q @ f)[j] = integral from -1 to x_j of the interpolant of f."""
    v2c = vals_to_coeffs(d)
    anti = C.chebint(v2c, lbnd=-1.0, axis=0)
    q = C.chebvander(lobatto(d), d + 1) @ anti
    q[0, :] = 0.0
    q.setflags(write=False)
    return q


def interpolation_matrix(d, u):
    """Rows evaluate the degree-d Lobatto interpolant at points `u` in [-1, 1]."""
    return C.chebvander(np.asarray(u, float), d) @ vals_to_coeffs(d)


def derivative(c):
    return C.chebder(c, axis=-1) if c.shape[-1] > 1 else np.zeros_like(c)


def antiderivative(c):
    """Antiderivative coefficients vanishing at -1, one degree higher."""
    return C.chebint(c, lbnd=-1.0, axis=-1)


def _bisect(c, a, b, fa):
    # c: (P, 1, K); a, b, fa: (P, r)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (a + b)
        fm = clenshaw(c, mid)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, mid, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, mid)
    return 0.5 * (a + b)


def _sign_change_roots(c, pts):
    """Roots of series `c` (P, K) inside each monotone bracket of sorted `pts` (P, r+2).

    Brackets without a sign change yield the right end of the bracket as a
    harmless padding value.
    """
    a = pts[:, :-1]
    b = pts[:, 1:]
    cc = c[:, None, :]
    fa = clenshaw(cc, a)
    fb = clenshaw(cc, b)
    change = (fa * fb < 0.0) & (b > a)
    roots = np.where(fa == 0.0, a, b)
    if change.any():
        roots = np.where(change, _bisect(cc, a, b, fa), roots)
    return np.sort(roots, axis=1)


def abs_max(c, lo, hi):
    """Exact maximum of |p| over [lo, hi] for every series row of `c` (P, K).

    Critical points are isolated without companion matrices: the roots of the
    j-th derivative are bracketed between consecutive roots of the (j+1)-th
    derivative, where it is monotone, and refined by bisection.
    """
    c = np.atleast_2d(np.asarray(c, float))
    lo = np.broadcast_to(np.asarray(lo, float), c.shape[:1])
    hi = np.broadcast_to(np.asarray(hi, float), c.shape[:1])
    k = c.shape[1]
    ends = np.maximum(np.abs(clenshaw(c, lo)), np.abs(clenshaw(c, hi)))
    if k <= 2:
        return ends
    derivs = [c]
    for _ in range(k - 2):
        derivs.append(derivative(derivs[-1]))
    # derivs[-1] is linear; walk back to the first derivative
    crit = np.empty((c.shape[0], 0))
    for dj in reversed(derivs[1:]):
        pts = np.concatenate([lo[:, None], crit, hi[:, None]], axis=1)
        crit = _sign_change_roots(dj, pts)
    vals = np.abs(clenshaw(c[:, None, :], crit))
    return np.maximum(ends, vals.max(axis=1))
