"""A concrete weak-* norm on bounded sets of L-infinity([-Delta, 0]; R^n).

The probes g^i are signed, component-selecting dyadic indicators normalised
in L1.  Enumeration order (version 1, part of the public contract) is
level-major: level k = 0, 1, 2, ... holds 2^k cells of width Delta 2^-k;
within a level the order is cell (left to right), then component j = 1..n,
then sign (+ before -).  Index 1 is therefore (1/Delta) e_1 on [-Delta, 0].

    ||phi||_* = sum_i 2^-i |<g^i, phi>|,

truncated after J terms with tail bound 2^-J ||phi||_inf.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .history import PiecewisePoly

ENUMERATION = "dyadic-level-major-v1"
DEFAULT_J = 24
SHIFT_RESOLUTION = 1e-3


@dataclass(frozen=True, eq=False)
class L1Probe:
    index: int
    g: PiecewisePoly
    level: int = None
    cell: int = None
    component: int = None
    sign: int = None

    @property
    def l1_norm(self):
        return _l1(self.g)

    @property
    def sup_norm(self):
        return float(np.abs(self.g.coeffs[:, :, 0]).max())

    def key(self):
        return (self.level, self.cell, self.component, self.sign)


def _l1(g):
    # l1 norm on R^n pointwise, as the dual of the infinity norm
    vals = np.abs(g.coeffs[:, :, 0]).sum(axis=1)
    return float(np.dot(np.diff(g.breakpoints), vals))


@dataclass(frozen=True)
class WeakStarGauge:
    n: int = 1
    Delta: float = 1.0
    J: int = DEFAULT_J
    scheme: str = ENUMERATION

    def probes(self):
        return [probe(i, self.n, self.Delta) for i in range(1, self.J + 1)]

    def norm(self, phi):
        return norm_star(phi, self.J)

    def dist(self, phi, psi):
        return dist(phi, psi, self.J)


def probe_key(i, n=1):
    """(level, cell, component, sign) of the i-th probe (1-based)."""
    if i < 1:
        raise ValueError("probe index starts at 1")
    r = i - 1
    level = 0
    while True:
        size = (2 ** level) * n * 2
        if r < size:
            break
        r -= size
        level += 1
    cell, rest = divmod(r, 2 * n)
    component, s = divmod(rest, 2)
    return level, cell, component, 1 if s == 0 else -1


def _keys(J, n):
    return np.array([probe_key(i, n) for i in range(1, J + 1)], dtype=np.int64).reshape(-1, 4)


def probe(i, n=1, Delta=1.0):
    level, cell, comp, sign = probe_key(i, n)
    w = Delta / 2 ** level
    a = -Delta + cell * w
    b = a + w
    bps = [-Delta]
    vals = []
    if cell > 0:
        bps.append(a)
        vals.append(np.zeros(n))
    bps.append(b if cell < 2 ** level - 1 else 0.0)
    v = np.zeros(n)
    v[comp] = sign / w
    vals.append(v)
    if cell < 2 ** level - 1:
        bps.append(0.0)
        vals.append(np.zeros(n))
    return L1Probe(i, PiecewisePoly.piecewise_constant(bps, np.array(vals)), level, cell, comp, sign)


def pairing(g, phi):
    """Exact integral of g^T phi for piecewise-constant g."""
    if isinstance(g, L1Probe):
        g = g.g
    if g.dim != phi.dim:
        raise ValueError("dimension mismatch")
    tol = 1e-12 * max(1.0, g.span)
    if abs(g.t_start - phi.t_start) > tol or abs(g.t_end - phi.t_end) > tol:
        raise ValueError("probe and function live on different intervals")
    if g.degree != 0:
        raise ValueError("probes must be piecewise constant")
    bp = g.breakpoints
    ints = phi.integrate(bp[:-1], bp[1:])
    return float(np.sum(ints * g.coeffs[:, :, 0]))


def _pairings(phi, J, key_fn=None):
    """Pairings of phi with probes 1..J, vectorised over dyadic cells."""
    n, Delta = phi.dim, -phi.t_start
    keys = _keys(J, n) if key_fn is None else key_fn(J, n)
    level, cell, comp, sign = keys.T
    w = Delta / 2.0 ** level
    a = -Delta + cell * w
    b = np.where(cell == 2 ** level - 1, 0.0, a + w)
    ints = phi.integrate(a, b)
    return sign * ints[np.arange(J), comp] / w


def _weights(J):
    return 0.5 ** np.arange(1, J + 1)


def norm_star(phi, J=DEFAULT_J):
    """(truncated value, tail bound) of the weak-* norm."""
    if J < 1:
        raise ValueError("J must be positive")
    val = float(np.dot(_weights(J), np.abs(_pairings(phi, J))))
    return val, 0.5 ** J * phi.ess_sup()


def dist(phi, psi, J=DEFAULT_J):
    return norm_star(phi - psi, J)


# --------------------------------------------------------- shifted segments
@lru_cache(maxsize=None)
def _probe_edges(J, n, Delta):
    keys = _keys(J, n)
    level, cell = keys[:, 0], keys[:, 1]
    w = Delta / 2.0 ** level
    a = -Delta + cell * w
    b = np.where(cell == 2 ** level - 1, 0.0, a + w)
    return a, b, keys[:, 2], keys[:, 3].astype(float), w


def _shift_grid(breaks, J, n, Delta, qmax, resolution):
    grid = np.linspace(0.0, qmax, int(np.ceil(qmax / (resolution * Delta))) + 1)
    a, b, _, _, _ = _probe_edges(J, n, Delta)
    edges = np.unique(np.concatenate([a, b]))
    extra = [-edges]
    # kinks where a breakpoint of the difference crosses a probe edge
    extra.append((breaks[:, None] - edges[None, :]).ravel())
    q = np.concatenate([grid] + extra)
    q = q[(q >= 0.0) & (q <= qmax)]
    return np.unique(q)


def shift_sup_dist(path_k, path_0, T, J=DEFAULT_J, resolution=SHIFT_RESOLUTION, detail=False):
    """max over shifts q in [0, T - t0] of d(segment(path_k, t0+q), segment(path_0, t0+q)).

    Both paths must share x and t0, so segments differ only on [-Delta, -q),
    where the difference is D(q + s) with D = phi_k - phi_0.  Pairings come
    from the primitive of D.  Shifts q >= Delta contribute 0.
    """
    if path_k.t0 != path_0.t0:
        raise ValueError("paths start at different times")
    xk, x0 = path_k.x, path_0.x
    if (xk is None) != (x0 is None) or (xk is not None and not (xk is x0 or xk == x0)):
        raise ValueError("paths must share the same x")
    if xk is None and not np.array_equal(path_k.xi0, path_0.xi0):
        raise ValueError("paths must share the same state at t0")
    if path_k.Delta != path_0.Delta:
        raise ValueError("histories live on different intervals")
    Delta, n = path_k.Delta, path_k.dim
    D = path_k.phi.without_marks() - path_0.phi.without_marks()
    qmax = min(T - path_k.t0, Delta)
    if qmax < 0:
        raise ValueError("T must not precede t0")
    q = _shift_grid(D.breakpoints, J, n, Delta, qmax, resolution)
    a, b, comp, sign, w = _probe_edges(J, n, Delta)
    weights = _weights(J)
    cut = -q[:, None]
    lo = np.minimum(a[None, :], cut) + q[:, None]
    hi = np.minimum(b[None, :], cut) + q[:, None]
    prim = D.primitive(np.concatenate([lo.ravel(), hi.ravel()]))
    m = lo.size
    ints = (prim[m:] - prim[:m]).reshape(q.size, J, n)
    pair = sign * ints[:, np.arange(J), comp] / w
    vals = np.abs(pair) @ weights
    i = int(np.argmax(vals))
    if not detail:
        return float(vals[i])
    # tail bound uses the ess-sup of the difference over the visible window
    tail = 0.5 ** J * D.ess_sup()
    return {"value": float(vals[i]), "argmax_shift": float(q[i]), "tail_bound": tail,
            "grid_size": int(q.size)}


def shift_dist_direct(path_k, path_0, q, J=DEFAULT_J):
    """Reference evaluation of one grid entry through explicit segments."""
    t = path_k.t0 + q
    return dist(path_k.segment(t).without_marks(), path_0.segment(t).without_marks(), J)[0]


# -------------------------------------------------------------- generators
def make_oscillating(phi0, k, amplitude):
    """phi0 plus a square wave of 2k equal cells alternating +amplitude, -amplitude."""
    if k < 1:
        raise ValueError("k must be positive")
    if amplitude == 0:
        return phi0
    Delta = -phi0.t_start
    bps = np.linspace(-Delta, 0.0, 2 * k + 1)
    vals = np.zeros((2 * k, phi0.dim))
    vals[0::2] = amplitude
    vals[1::2] = -amplitude
    wave = PiecewisePoly.piecewise_constant(bps, vals)
    return phi0 + wave


def _jumps(ic, tol=1e-14):
    phi = ic.phi
    scale = tol * max(1.0, phi.ess_sup(), float(np.abs(ic.xi0).max()))
    out = [float(b) for b in phi.breakpoints[1:-1]
           if np.abs(phi.left_limit(b) - phi.ae(b)).max() > scale]
    return out


def make_continuous_approximants(ic, k):
    """Continuous psi^k with psi^k(0) = xi0 agreeing with phi off small crossfades.

    Each jump b of phi (and the mismatch between phi(0-) and xi0) is replaced
    on [b - w, b] by the segment joining phi(b - w) to the right value at b,
    with w = Delta / (4 k m) for m crossfades.
    """
    if k < 1:
        raise ValueError("k must be positive")
    phi = ic.phi.without_marks()
    Delta = ic.Delta
    jumps = _jumps(ic)
    end_gap = np.abs(phi.left_limit(0.0) - ic.xi0).max() > 1e-14 * max(1.0, float(np.abs(ic.xi0).max()))
    targets = [(b, phi.ae(b)) for b in jumps]
    if end_gap:
        targets.append((0.0, np.array(ic.xi0)))
    if not targets:
        return phi
    w = Delta / (4.0 * k * len(targets))
    parts = []
    left = -Delta
    for b, right_val in targets:
        wb = min(w, 0.5 * (b - left))
        a = b - wb
        if a > left:
            parts.append(phi.restrict(left, a))
        parts.append(PiecewisePoly.linear(a, b, phi.ae(a), right_val))
        left = b
    if left < 0.0:
        parts.append(phi.restrict(left, 0.0))
    return PiecewisePoly.join(parts).with_endpoints(-Delta, 0.0)
