"""Piecewise polynomial vector functions, initial conditions and concatenated paths.

Each piece is a Chebyshev series in the local coordinate of its own *native*
interval, which contains the piece's support.  Restricting or shifting a
function therefore never re-expands coefficients.

Evaluation at a breakpoint returns the right limit, except at ``t_end`` where
the left limit is returned.  ``PiecewisePoly.ae`` evaluates the polynomial
pieces only; ``__call__`` additionally honours point marks, i.e. values on a
finite (measure-zero) set of times.  Every numerical routine in the package
uses ``ae``.
"""

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _chebyshev as ch
from .export import dumps

P_MAX = 8
MERGE_RTOL = 1e-14
DOMAIN_RTOL = 1e-12


class PiecewisePoly:
    """Vector-valued piecewise polynomial on ``[t_start, t_end]``.

    Parameters
    ----------
    breakpoints : array (m+1,)
        Strictly increasing.
    coeffs : array (m, dim, deg+1)
        Chebyshev coefficients per piece and component.
    native : array (m, 2), optional
        Interval mapped onto [-1, 1] for each piece (defaults to the support).
    marks : sequence of (time, value), optional
        Pointwise values used only by ``__call__``.
    """

    def __init__(self, breakpoints, coeffs, native=None, marks=()):
        bp = np.array(breakpoints, dtype=float)
        cf = np.array(coeffs, dtype=float)
        if bp.ndim != 1 or bp.size < 2:
            raise ValueError("need at least two breakpoints")
        if cf.ndim != 3 or cf.shape[0] != bp.size - 1:
            raise ValueError("coeffs must have shape (pieces, dim, degree+1)")
        if cf.shape[2] - 1 > P_MAX:
            raise ValueError(f"piece degree {cf.shape[2] - 1} exceeds cap {P_MAX}")
        if not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not (np.all(np.isfinite(bp)) and np.all(np.isfinite(cf))):
            raise ValueError("breakpoints and coefficients must be finite")
        nat = np.stack([bp[:-1], bp[1:]], axis=1) if native is None else np.array(native, float)
        if nat.shape != (cf.shape[0], 2) or not np.all(nat[:, 1] > nat[:, 0]):
            raise ValueError("native intervals must have shape (pieces, 2) and positive width")

        span = bp[-1] - bp[0]
        widths = np.diff(bp)
        keep = widths >= MERGE_RTOL * span
        if not keep.all():
            if not keep.any():
                keep[np.argmax(widths)] = True
            kept = np.flatnonzero(keep)
            inner = bp[kept[1:]]  # left edges of all kept pieces but the first
            bp = np.concatenate([[bp[0]], inner, [bp[-1]]])
            cf = cf[kept]
            nat = nat[kept]

        for a in (bp, cf, nat):
            a.setflags(write=False)
        self.breakpoints = bp
        self.coeffs = cf
        self.native = nat
        self.marks = tuple(
            (float(t), np.array(v, float).reshape(cf.shape[1])) for t, v in marks
        )
        for t, v in self.marks:
            if not (bp[0] <= t <= bp[-1]) or not np.all(np.isfinite(v)):
                raise ValueError("marks must lie in the domain and be finite")

    # ------------------------------------------------------------------ basics
    @property
    def dim(self):
        return self.coeffs.shape[1]

    @property
    def degree(self):
        return self.coeffs.shape[2] - 1

    @property
    def n_pieces(self):
        return self.coeffs.shape[0]

    @property
    def t_start(self):
        return float(self.breakpoints[0])

    @property
    def t_end(self):
        return float(self.breakpoints[-1])

    @property
    def span(self):
        return self.t_end - self.t_start

    def __repr__(self):
        return (
            f"PiecewisePoly(dim={self.dim}, [{self.t_start:g}, {self.t_end:g}], "
            f"pieces={self.n_pieces}, degree={self.degree})"
        )

    def __eq__(self, other):
        if not isinstance(other, PiecewisePoly):
            return NotImplemented
        return (
            np.array_equal(self.breakpoints, other.breakpoints)
            and np.array_equal(self.coeffs, other.coeffs)
            and np.array_equal(self.native, other.native)
            and len(self.marks) == len(other.marks)
            and all(a[0] == b[0] and np.array_equal(a[1], b[1])
                    for a, b in zip(self.marks, other.marks))
        )

    __hash__ = None

    # ------------------------------------------------------------ constructors
    @classmethod
    def constant(cls, value, t_start, t_end):
        v = np.atleast_1d(np.asarray(value, float))
        return cls([t_start, t_end], v[None, :, None])

    @classmethod
    def piecewise_constant(cls, breakpoints, values):
        vals = np.asarray(values, float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return cls(breakpoints, vals[:, :, None])

    @classmethod
    def linear(cls, t_start, t_end, v_start, v_end):
        a = np.atleast_1d(np.asarray(v_start, float))
        b = np.atleast_1d(np.asarray(v_end, float))
        cf = np.stack([(a + b) / 2, (b - a) / 2], axis=-1)
        return cls([t_start, t_end], cf[None])

    @classmethod
    def from_function(cls, f, breakpoints, degree):
        """Interpolate vectorised `f` at Chebyshev points on every piece.

        Exact (to rounding) when `f` is a polynomial of degree <= `degree`
        on each piece.  `f` maps an array (N,) to (N,) or (N, dim).
        """
        bp = np.asarray(breakpoints, float)
        a, b = bp[:-1, None], bp[1:, None]
        x = ch.lobatto(degree)
        t = 0.5 * (a + b) + 0.5 * (b - a) * x[None, :]
        vals = np.asarray(f(t.ravel()), float)
        vals = vals.reshape(t.shape + (-1,))  # (m, d+1, dim)
        cf = np.einsum("kj,mjn->mnk", ch.vals_to_coeffs(degree), vals)
        return cls(bp, cf)

    @classmethod
    def join(cls, parts):
        """Concatenate functions on adjacent intervals (marks are kept)."""
        parts = [p for p in parts if p is not None]
        if not parts:
            raise ValueError("nothing to join")
        if len(parts) == 1:
            return parts[0]
        dim = parts[0].dim
        deg = max(p.degree for p in parts)
        bps, cfs, nats, marks = [parts[0].breakpoints[:1]], [], [], []
        for prev, p in zip([None] + parts[:-1], parts):
            if p.dim != dim:
                raise ValueError("dimension mismatch")
            if prev is not None and abs(p.t_start - prev.t_end) > DOMAIN_RTOL * max(1.0, abs(p.t_start)):
                raise ValueError("parts are not adjacent")
            bps.append(p.breakpoints[1:])
            cfs.append(np.pad(p.coeffs, ((0, 0), (0, 0), (0, deg - p.degree))))
            nats.append(p.native)
            marks.extend(p.marks)
        return cls(np.concatenate(bps), np.concatenate(cfs), np.concatenate(nats), marks)

    # -------------------------------------------------------------- evaluation
    def _check_domain(self, t):
        tol = DOMAIN_RTOL * max(1.0, self.span, abs(self.t_start), abs(self.t_end))
        if np.any(t < self.t_start - tol) or np.any(t > self.t_end + tol):
            raise ValueError(
                f"evaluation outside [{self.t_start:.17g}, {self.t_end:.17g}]"
            )

    def _locate(self, t):
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(idx, 0, self.n_pieces - 1)

    def _eval_pieces(self, idx, t):
        nat = self.native[idx]
        u = (2.0 * t - (nat[:, 0] + nat[:, 1])) / (nat[:, 1] - nat[:, 0])
        return ch.clenshaw(self.coeffs[idx], u[:, None])

    def ae(self, t):
        """Value of the polynomial pieces (marks ignored)."""
        t = np.asarray(t, float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t).ravel()
        self._check_domain(tt)
        out = self._eval_pieces(self._locate(tt), tt)
        if scalar:
            return out[0]
        return out.reshape(t.shape + (self.dim,))

    def __call__(self, t):
        out = self.ae(t)
        if not self.marks:
            return out
        t = np.asarray(t, float)
        if t.ndim == 0:
            for tm, v in self.marks:
                if t == tm:
                    out = v.copy()
            return out
        out = np.array(out)
        for tm, v in self.marks:
            out[t == tm] = v
        return out

    def left_limit(self, t):
        idx = np.clip(np.searchsorted(self.breakpoints, t, side="left") - 1, 0, self.n_pieces - 1)
        return self._eval_pieces(np.atleast_1d(idx), np.atleast_1d(float(t)))[0]

    # ----------------------------------------------------------- restructuring
    def restrict(self, a, b):
        """The same function on the subinterval [a, b] (natives unchanged)."""
        a, b = float(a), float(b)
        self._check_domain(np.array([a, b]))
        if not b > a:
            raise ValueError("empty restriction")
        i_lo = int(self._locate(np.array([a]))[0])
        i_hi = int(np.clip(np.searchsorted(self.breakpoints, b, side="left") - 1, 0, self.n_pieces - 1))
        i_hi = max(i_hi, i_lo)
        bp = np.concatenate([[a], self.breakpoints[i_lo + 1:i_hi + 1], [b]])
        marks = [(t, v) for t, v in self.marks if a <= t <= b]
        return PiecewisePoly(bp, self.coeffs[i_lo:i_hi + 1], self.native[i_lo:i_hi + 1], marks)

    def shift(self, dt):
        if dt == 0:
            return self
        return PiecewisePoly(
            self.breakpoints + dt, self.coeffs, self.native + dt,
            [(t + dt, v) for t, v in self.marks],
        )

    def refine(self, points):
        """Insert breakpoints; pieces are split without touching coefficients."""
        pts = np.asarray(points, float)
        pts = pts[(pts > self.t_start) & (pts < self.t_end)]
        new = np.union1d(self.breakpoints, pts)
        if new.size == self.breakpoints.size:
            return self
        idx = self._locate(new[:-1])
        return PiecewisePoly(new, self.coeffs[idx], self.native[idx], self.marks)

    def with_marks(self, marks):
        return PiecewisePoly(self.breakpoints, self.coeffs, self.native, list(self.marks) + list(marks))

    def without_marks(self):
        if not self.marks:
            return self
        return PiecewisePoly(self.breakpoints, self.coeffs, self.native)

    def with_endpoints(self, t_start, t_end):
        """Snap the outer breakpoints (used after shifts that round)."""
        inner = self.breakpoints[1:-1]
        first = int(np.searchsorted(inner, t_start, side="right"))
        last = int(np.searchsorted(inner, t_end, side="left"))
        bp = np.concatenate([[t_start], inner[first:last], [t_end]])
        sl = slice(first, last + 1)
        return PiecewisePoly(bp, self.coeffs[sl], self.native[sl], self.marks)

    # -------------------------------------------------------------- arithmetic
    def _common(self, other):
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        tol = DOMAIN_RTOL * max(1.0, self.span)
        if abs(self.t_start - other.t_start) > tol or abs(self.t_end - other.t_end) > tol:
            raise ValueError("domain mismatch")
        pts = np.union1d(self.breakpoints[1:-1], other.breakpoints[1:-1])
        grid = np.concatenate([[self.t_start], pts, [self.t_end]])
        gap = np.diff(grid) >= MERGE_RTOL * self.span
        grid = np.concatenate([[grid[0]], grid[1:-1][gap[:-1]], [grid[-1]]])
        return grid

    def _combine(self, other, op):
        grid = self._common(other)
        a = self.refine(grid[1:-1])
        b = other.refine(grid[1:-1])
        ia = a._locate(grid[:-1])
        ib = b._locate(grid[:-1])
        deg = max(a.degree, b.degree)
        same = np.all(a.native[ia] == b.native[ib], axis=1)
        ca = np.pad(a.coeffs[ia], ((0, 0), (0, 0), (0, deg - a.degree)))
        cb = np.pad(b.coeffs[ib], ((0, 0), (0, 0), (0, deg - b.degree)))
        cf = op(ca, cb)
        nat = np.array(a.native[ia])
        if not same.all():
            # re-expand both operands on the cell itself where natives differ
            cells = np.flatnonzero(~same)
            lo, hi = grid[cells], grid[cells + 1]
            x = ch.lobatto(deg)
            t = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * x[None, :]
            va = a._eval_cells(ia[cells], t)
            vb = b._eval_cells(ib[cells], t)
            cf[cells] = np.einsum("kj,mjn->mnk", ch.vals_to_coeffs(deg), op(va, vb))
            nat[cells] = np.stack([lo, hi], axis=1)
        marks = {}
        for t, _ in self.marks + other.marks:
            marks[t] = op(self(t), other(t))
        return PiecewisePoly(grid, cf, nat, list(marks.items()))

    def _eval_cells(self, idx, t):
        # t: (cells, K) evaluated on piece idx[cell]
        nat = self.native[idx]
        u = (2.0 * t - (nat[:, :1] + nat[:, 1:])) / (nat[:, 1:] - nat[:, :1])
        return ch.clenshaw(self.coeffs[idx][:, None, :, :], u[:, :, None])

    def __add__(self, other):
        if isinstance(other, PiecewisePoly):
            return self._combine(other, np.add)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, PiecewisePoly):
            return self._combine(other, np.subtract)
        return NotImplemented

    def __mul__(self, a):
        a = float(a)
        return PiecewisePoly(self.breakpoints, self.coeffs * a, self.native,
                             [(t, v * a) for t, v in self.marks])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def add_constant_pieces(self, values):
        """Add a constant vector per piece (exact: only c0 changes)."""
        vals = np.asarray(values, float).reshape(self.n_pieces, -1)
        cf = np.array(self.coeffs)
        cf[:, :, 0] += vals
        return PiecewisePoly(self.breakpoints, cf, self.native)

    # ---------------------------------------------------------------- analysis
    def _support_u(self):
        nat = self.native
        w = nat[:, 1] - nat[:, 0]
        lo = np.clip((2.0 * self.breakpoints[:-1] - nat.sum(axis=1)) / w, -1.0, 1.0)
        hi = np.clip((2.0 * self.breakpoints[1:] - nat.sum(axis=1)) / w, -1.0, 1.0)
        return lo, hi

    @cached_property
    def piece_sups(self):
        """Exact sup norm (max over components) of every piece on its support."""
        lo, hi = self._support_u()
        m, n, k = self.coeffs.shape
        vals = ch.abs_max(self.coeffs.reshape(m * n, k), np.repeat(lo, n), np.repeat(hi, n))
        out = vals.reshape(m, n).max(axis=1)
        out.setflags(write=False)
        return out

    def ess_sup(self):
        return float(self.piece_sups.max())

    def coeff_bounds(self):
        """Cheap per-piece upper bounds: sum of |coefficients|."""
        return np.abs(self.coeffs).sum(axis=2).max(axis=1)

    def derivative(self):
        """Piecewise derivative (point marks are dropped)."""
        nat = self.native
        half = 0.5 * (nat[:, 1] - nat[:, 0])
        d = ch.derivative(self.coeffs) / half[:, None, None]
        return PiecewisePoly(self.breakpoints, d, nat)

    @cached_property
    def _antiderivative(self):
        nat = self.native
        half = 0.5 * (nat[:, 1] - nat[:, 0])
        anti = ch.antiderivative(self.coeffs) * half[:, None, None]
        lo, hi = self._support_u()
        piece = ch.clenshaw(anti, hi[:, None]) - ch.clenshaw(anti, lo[:, None])
        cum = np.concatenate([np.zeros((1, self.dim)), np.cumsum(piece, axis=0)])
        base = ch.clenshaw(anti, lo[:, None])
        return anti, cum, base

    def primitive(self, t):
        """Integral from t_start to t (vectorised over t)."""
        t = np.atleast_1d(np.asarray(t, float))
        self._check_domain(t)
        anti, cum, base = self._antiderivative
        idx = self._locate(t)
        nat = self.native[idx]
        u = (2.0 * t - (nat[:, 0] + nat[:, 1])) / (nat[:, 1] - nat[:, 0])
        return cum[idx] + ch.clenshaw(anti[idx], u[:, None]) - base[idx]

    def integrate(self, a, b):
        """Integral over [a, b] for arrays of bounds; returns (N, dim)."""
        return self.primitive(b) - self.primitive(a)

    # ----------------------------------------------------------- serialisation
    def to_record(self):
        return {
            "kind": "PiecewisePoly",
            "basis": "chebyshev-native",
            "dim": self.dim,
            "degree": self.degree,
            "breakpoints": self.breakpoints.tolist(),
            "native": self.native.ravel().tolist(),
            "coefficients": self.coeffs.ravel().tolist(),
            "marks": [[t, v.tolist()] for t, v in self.marks],
        }

    @classmethod
    def from_record(cls, rec):
        if rec.get("kind") != "PiecewisePoly":
            raise ValueError("not a PiecewisePoly record")
        bp = np.asarray(rec["breakpoints"], float)
        m = bp.size - 1
        cf = np.asarray(rec["coefficients"], float).reshape(m, rec["dim"], rec["degree"] + 1)
        nat = np.asarray(rec["native"], float).reshape(m, 2)
        return cls(bp, cf, nat, [(t, v) for t, v in rec.get("marks", [])])

    def dumps(self):
        return dumps(self.to_record())

    @classmethod
    def loads(cls, text):
        return cls.from_record(json.loads(text))


def ess_sup_norm(f):
    """Essential supremum of `f` (infinity norm across components)."""
    return f.ess_sup()


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """The pair (xi0, phi): state at the initial time and history on [-Delta, 0]."""

    xi0: np.ndarray
    phi: PiecewisePoly

    def __post_init__(self):
        xi0 = np.atleast_1d(np.array(self.xi0, dtype=float))
        xi0.setflags(write=False)
        object.__setattr__(self, "xi0", xi0)
        if xi0.shape != (self.phi.dim,):
            raise ValueError("xi0 and phi dimensions differ")
        if self.phi.t_end != 0.0:
            raise ValueError("phi must be defined on [-Delta, 0]")
        if not np.all(np.isfinite(xi0)):
            raise ValueError("xi0 must be finite")

    @property
    def Delta(self):
        return -self.phi.t_start

    @property
    def dim(self):
        return self.phi.dim

    @classmethod
    def constant(cls, value, Delta=1.0, xi0=None):
        phi = PiecewisePoly.constant(value, -Delta, 0.0)
        return cls(phi.coeffs[0, :, 0] if xi0 is None else xi0, phi)

    def is_continuous(self, tol=1e-14):
        """True when phi is continuous and phi(0-) equals xi0."""
        phi = self.phi
        scale = tol * max(1.0, phi.ess_sup(), float(np.abs(self.xi0).max()))
        for b in phi.breakpoints[1:-1]:
            if np.abs(phi.left_limit(b) - phi.ae(b)).max() > scale:
                return False
        return bool(np.abs(phi.left_limit(0.0) - self.xi0).max() <= scale)

    def to_record(self):
        return {"xi0": self.xi0.tolist(), "phi": self.phi.to_record()}

    @classmethod
    def from_record(cls, rec):
        return cls(rec["xi0"], PiecewisePoly.from_record(rec["phi"]))


def perturb_zero_measure(ic, points, values):
    """Change the representative of phi on a finite set of times in (-Delta, 0)."""
    points = list(points)
    values = list(values)
    if len(points) != len(values):
        raise ValueError("points and values differ in length")
    for p in points:
        if p == 0.0:
            raise ValueError("a point at 0 would change xi0")
        if not (-ic.Delta < p < 0.0):
            raise ValueError("points must lie in (-Delta, 0)")
    if not points:
        return ic
    return InitialCondition(ic.xi0, ic.phi.with_marks(zip(points, values)))


@dataclass(frozen=True, eq=False)
class ExtendedPath:
    """The concatenation of a history phi (before t0) with a path x (from t0).

    `x` may be ``None`` for the path at its very start, in which case `xi0`
    is the value at t0.
    """

    t0: float
    phi: PiecewisePoly
    x: PiecewisePoly = None
    xi0: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "t0", float(self.t0))
        if self.x is not None:
            if self.x.dim != self.phi.dim:
                raise ValueError("dimension mismatch between phi and x")
            if abs(self.x.t_start - self.t0) > DOMAIN_RTOL * max(1.0, abs(self.t0)):
                raise ValueError("x must start at t0")
            object.__setattr__(self, "xi0", self.x.ae(self.t0))
        elif self.xi0 is None:
            raise ValueError("need x or xi0")
        else:
            object.__setattr__(self, "xi0", np.atleast_1d(np.asarray(self.xi0, float)))

    @classmethod
    def start(cls, ic, t0):
        return cls(t0, ic.phi, None, ic.xi0)

    @property
    def Delta(self):
        return -self.phi.t_start

    @property
    def dim(self):
        return self.phi.dim

    @property
    def t_end(self):
        return self.t0 if self.x is None else self.x.t_end

    def _eval(self, t, pointwise):
        t = np.asarray(t, float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t).ravel()
        out = np.empty((tt.size, self.dim))
        before = tt < self.t0
        if before.any():
            f = self.phi if pointwise else self.phi.ae
            out[before] = f(tt[before] - self.t0)
        after = ~before
        if after.any():
            if self.x is None:
                if np.any(tt[after] > self.t0):
                    raise ValueError("path not defined beyond t0")
                out[after] = self.xi0
            else:
                out[after] = self.x.ae(tt[after])
        return out[0] if scalar else out.reshape(t.shape + (self.dim,))

    def ae(self, t):
        return self._eval(t, False)

    def __call__(self, t):
        return self._eval(t, True)

    def breakpoints_between(self, a, b):
        """Breakpoints of the path strictly inside (a, b)."""
        pts = [self.t0 + self.phi.breakpoints, np.array([self.t0])]
        if self.x is not None:
            pts.append(self.x.breakpoints)
        allp = np.concatenate(pts)
        return np.unique(allp[(allp > a) & (allp < b)])

    def segment(self, t):
        """The history segment s -> path(t + s) on [-Delta, 0]."""
        t = float(t)
        tol = DOMAIN_RTOL * max(1.0, abs(t))
        if t < self.t0 - tol or t > self.t_end + tol:
            raise ValueError("segment time outside [t0, T]")
        D = self.Delta
        a = t - D
        tiny = MERGE_RTOL * D
        parts = []
        if a < self.t0 - tiny:
            parts.append(self.phi.restrict(a - self.t0, 0.0).shift(self.t0 - t))
        if t > self.t0 + tiny:
            parts.append(self.x.restrict(max(a, self.t0), t).shift(-t))
        seg = PiecewisePoly.join(parts).with_endpoints(-D, 0.0)
        if t <= self.t0 + tiny:
            end = self.xi0 if self.x is None else self.x.ae(self.t0)
            seg = seg.with_marks([(0.0, end)])
        return seg


def concat(phi, t0, x):
    """Concatenate history `phi` on [-Delta, 0] with `x` on [t0, T]."""
    if phi.dim != x.dim:
        raise ValueError("dimension mismatch")
    if abs(x.t_start - t0) > DOMAIN_RTOL * max(1.0, abs(t0)):
        raise ValueError("x must start at t0")
    return ExtendedPath(t0, phi, x)


def segment(path, t):
    return path.segment(t)
