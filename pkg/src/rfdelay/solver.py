"""Method of steps with a Picard iteration per step.

Each step [t, t + h] carries a degree-d Chebyshev interpolant of x at the
d+1 Chebyshev-Lobatto nodes.  The integral equation

    y(u) = xi + int_t^u g(r, y(r), x(r - tau_1), ..., nu(r)) dr

is iterated on the node values with Clenshaw-Curtis cumulative integration.
Since h <= tau_1, every delayed value lies in the known past; the
distributed term splits into a fixed past part and a part on the current
step that depends on the iterate.

Step lengths follow the contraction argument: with sup the local sup of
the path, R = 2 (1 + sup), an estimated Lipschitz constant L on B_R and
F_R = |rhs| + L R,

    h = min(tau_1, T - t, lambda_max / L, (R - sup) / F_R),

and steps never straddle a propagated breakpoint t0 + b + (sum of up to
`depth` delays).
"""

import enum
import hashlib
import math
import weakref
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations_with_replacement

import numpy as np

from . import _chebyshev as ch
from .expr import EvaluationError
from .history import ExtendedPath, InitialCondition, PiecewisePoly
from .quadrature import ESCALATED_ORDER, ESCALATION_TOL, SUBCELLS, gauss_rule
from .system import AFFINE, LinearKernel, lipschitz_estimate


class Status(str, enum.Enum):
    COMPLETED = "Completed"
    BLOWUP = "BlowUp"
    STEP_FLOOR = "StepFloor"
    PICARD_STALL = "PicardStall"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SolverConfig:
    picard_tol: float = 1e-12
    max_picard_iters: int = 60
    lambda_max: float = 0.5
    degree: int = 6
    blowup_threshold: float = 1e8
    min_step: float = None  # defaults to 1e-9 * Delta
    depth: int = 3
    quad_order: int = 8
    quad_order_escalated: int = ESCALATED_ORDER
    quad_tol: float = ESCALATION_TOL
    subcells: int = SUBCELLS
    contraction_slack: float = 0.1
    residual_factor: float = 10.0
    lipschitz_probes: int = 256
    snap_rtol: float = 1e-6
    max_floor_steps: int = 10000
    lipschitz_margin: float = 0.1  # L on B_rho, rho = sup + margin (1 + sup); None: rho = R

    def __post_init__(self):
        if not 0 < self.lambda_max < 1:
            raise ValueError("lambda_max must lie in (0, 1)")
        if self.picard_tol <= 0 or self.blowup_threshold <= 0:
            raise ValueError("tolerances must be positive")
        if not 1 <= self.degree <= 8:
            raise ValueError("collocation degree must lie in 1..8")
        if self.max_picard_iters < 1 or self.depth < 0:
            raise ValueError("iteration limits must be positive")
        if self.min_step is not None and self.min_step <= 0:
            raise ValueError("min_step must be positive")

    def digest(self):
        text = repr(sorted(asdict(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(eq=False)
class SolveOutcome:
    trajectory: PiecewisePoly
    status: Status
    t0: float
    T: float
    ic: InitialCondition
    escape_estimate: float = None
    message: str = ""
    diagnostics: dict = field(default_factory=dict)
    knots: np.ndarray = None
    knot_values: np.ndarray = None
    base_points: np.ndarray = None
    lip_horizon: float = None

    @property
    def T_reached(self):
        return self.trajectory.t_end

    @property
    def completed(self):
        return self.status == Status.COMPLETED

    @property
    def path(self):
        return ExtendedPath(self.t0, self.ic.phi, self.trajectory)

    def sup(self):
        return max(self.trajectory.ess_sup(), float(np.abs(self.ic.xi0).max()))

    def value(self, t):
        """x(t); exact at step ends."""
        t = float(t)
        i = np.searchsorted(self.knots, t)
        if i < self.knots.size and self.knots[i] == t:
            return self.knot_values[i].copy()
        return self.trajectory.ae(t)

    def summary(self):
        d = self.diagnostics
        return {
            "status": str(self.status),
            "t0": self.t0,
            "T_requested": self.T,
            "T_reached": self.T_reached,
            "escape_estimate": self.escape_estimate,
            "message": self.message,
            "steps": d.get("steps", 0),
            "max_contraction_ratio": d.get("max_ratio", 0.0),
            "picard_iteration_histogram": {str(k): v for k, v in sorted(d.get("iterations", {}).items())},
            "quadrature_escalations": d.get("escalations", 0),
            "step_halvings": d.get("halvings", 0),
            "residual_rejections": d.get("residual_rejections", 0),
            "max_residual": d.get("max_residual", 0.0),
            "floor_steps": d.get("floor_steps", 0),
            "unverified_steps": d.get("unverified_steps", 0),
            "final_state": self.knot_values[-1].tolist(),
        }


# ----------------------------------------------------------------- helpers
def propagated_breakpoints(base, taus, depth, t_lo, t_hi):
    """Points b + (sum of 1..depth positive delays) for b in base, inside (t_lo, t_hi)."""
    base = np.asarray(base, float)
    pos = [float(x) for x in taus[1:]]
    shifts = {0.0}
    for k in range(1, depth + 1):
        for combo in combinations_with_replacement(pos, k):
            shifts.add(math.fsum(combo))
    pts = (base[:, None] + np.array(sorted(shifts))[None, :]).ravel()
    pts = pts[(pts > t_lo) & (pts < t_hi)]
    return np.unique(pts)


_LIP_CACHE = weakref.WeakKeyDictionary()


def _radius_bucket(R):
    return 2.0 ** (math.ceil(4.0 * math.log2(R)) / 4.0)


def cached_lipschitz(sys, R, T, probes=256):
    """lipschitz_estimate on the smallest bucket radius 2^(k/4) >= R (memoised)."""
    Rb = _radius_bucket(R)
    cache = _LIP_CACHE.setdefault(sys, {})
    key = (Rb, float(T), probes)
    if key not in cache:
        cache[key] = lipschitz_estimate(sys, Rb, T, probes=probes)
    return cache[key]


def _g(sys, t, xi, nu):
    if sys.cls == AFFINE:
        return sys.g.split_eval(t, xi, nu)
    return sys.g(t, xi, nu)


@dataclass
class _Cells:
    """Quadrature data for a set of node times."""
    nodes: np.ndarray
    nu_past: np.ndarray  # (K, p)
    cur_idx: np.ndarray
    cur_s: np.ndarray
    cur_w: np.ndarray
    cur_E: np.ndarray  # (Pc, d+1)
    M: np.ndarray = None  # linear kernels: (K, p, n, d+1)

    def take(self, sel):
        """The same data restricted to the nodes `sel` (an index array)."""
        pos = np.full(self.nodes.size, -1)
        pos[sel] = np.arange(len(sel))
        keep = pos[self.cur_idx] >= 0
        M = None if self.M is None else self.M[sel]
        return _Cells(self.nodes[sel], self.nu_past[sel], pos[self.cur_idx[keep]], self.cur_s[keep],
                      self.cur_w[keep], self.cur_E[keep], M)


class _Store:
    """Growable piecewise representation of the path on [t0 - Delta, t]."""

    def __init__(self, t0, phi, degree):
        self.t0 = t0
        k = max(phi.degree, degree) + 1
        m = phi.n_pieces
        cap = max(64, 2 * m)
        self.bps = np.empty(cap + 1)
        self.cf = np.zeros((cap, phi.dim, k))
        self.nat = np.empty((cap, 2))
        self.bound = np.empty(cap)
        self.bps[:m + 1] = phi.breakpoints + t0
        self.bps[m] = t0
        self.cf[:m, :, :phi.degree + 1] = phi.coeffs
        self.nat[:m] = phi.native + t0
        self.bound[:m] = phi.coeff_bounds()
        self.m = m
        self.m_hist = m
        self._gauss = {}

    def gauss_values(self, q, idx):
        """Gauss nodes and path values on whole pieces `idx` (cached per order)."""
        from .quadrature import gauss_rule

        entry = self._gauss.get(q)
        cap = self.cf.shape[0]
        if entry is None or entry[0].shape[0] < cap:
            S = np.empty((cap, q))
            X = np.empty((cap, q, self.cf.shape[1]))
            filled = 0
            if entry is not None:
                filled = entry[2]
                S[:filled], X[:filled] = entry[0][:filled], entry[1][:filled]
            entry = [S, X, filled]
            self._gauss[q] = entry
        S, X, filled = entry
        if filled < self.m:
            gx, _ = gauss_rule(q)
            lo, hi = self.bps[filled:self.m], self.bps[filled + 1:self.m + 1]
            half = 0.5 * (hi - lo)
            sn = (0.5 * (lo + hi))[:, None] + half[:, None] * gx
            pid = np.repeat(np.arange(filled, self.m), q)
            nat = self.nat[pid]
            r = sn.ravel()
            u = (2.0 * r - (nat[:, 0] + nat[:, 1])) / (nat[:, 1] - nat[:, 0])
            vals = ch.clenshaw(self.cf[pid], u[:, None])
            S[filled:self.m] = sn
            X[filled:self.m] = vals.reshape(self.m - filled, q, -1)
            entry[2] = self.m
        return S[idx], X[idx]

    def _grow(self):
        cap = self.cf.shape[0] * 2
        for name in ("bps", "cf", "nat", "bound"):
            old = getattr(self, name)
            shape = (cap + 1,) if name == "bps" else (cap,) + old.shape[1:]
            new = np.zeros(shape) if name == "cf" else np.empty(shape)
            new[:old.shape[0]] = old
            setattr(self, name, new)

    def append(self, a, b, coeffs):
        if self.m + 1 >= self.cf.shape[0]:
            self._grow()
        i = self.m
        self.bps[i + 1] = b
        self.cf[i] = 0.0
        self.cf[i, :, :coeffs.shape[1]] = coeffs
        self.nat[i] = (a, b)
        self.bound[i] = np.abs(coeffs).sum(axis=1).max()
        self.m += 1

    def eval(self, r, side="right"):
        bps = self.bps[:self.m + 1]
        idx = np.clip(np.searchsorted(bps, r, side=side) - 1, 0, self.m - 1)
        nat = self.nat[idx]
        u = (2.0 * r - (nat[:, 0] + nat[:, 1])) / (nat[:, 1] - nat[:, 0])
        return ch.clenshaw(self.cf[idx], u[:, None])

    def eval_piece(self, i, r):
        nat = self.nat[i]
        u = (2.0 * np.asarray(r) - (nat[0] + nat[1])) / (nat[1] - nat[0])
        return ch.clenshaw(self.cf[i][None, :, :], u[:, None])

    def breakpoints_in(self, a, b):
        bps = self.bps[:self.m + 1]
        lo = np.searchsorted(bps, a, side="right")
        hi = np.searchsorted(bps, b, side="left")
        return bps[lo:hi]

    def local_sup(self, a, b):
        """Cheap upper bound of |path| over pieces meeting (a, b)."""
        bps = self.bps[:self.m + 1]
        lo = max(int(np.searchsorted(bps, a, side="right")) - 1, 0)
        hi = min(int(np.searchsorted(bps, b, side="left")), self.m)
        return float(self.bound[lo:hi].max()) if hi > lo else 0.0


class _Integrator:
    def __init__(self, sys, t0, xi0, phi, T, cfg, base_points, forced, lip_horizon, warm_history):
        if phi.dim != sys.n or np.size(xi0) != sys.n:
            raise ValueError("initial condition dimension does not match the system")
        if abs(-phi.t_start - sys.Delta) > 1e-12 * sys.Delta:
            raise ValueError("history must live on [-Delta, 0]")
        self.sys, self.cfg = sys, cfg
        self.t0, self.T = float(t0), float(T)
        self.d = cfg.degree
        self.xi0 = np.array(xi0, float).reshape(sys.n)
        self.store = _Store(self.t0, phi.without_marks(), self.d)
        self.lin = isinstance(sys.kernel, LinearKernel)
        self.zero_kernel = sys.kernel.is_zero
        self.min_step = cfg.min_step if cfg.min_step is not None else 1e-9 * sys.Delta
        sched = propagated_breakpoints(base_points, sys.taus, cfg.depth, self.t0, self.T)
        if forced is not None and len(forced):
            f = np.asarray(forced, float)
            sched = np.union1d(sched, f[(f > self.t0) & (f < self.T)])
        self.schedule = np.append(sched, self.T)
        self.base_points = np.asarray(base_points, float)
        self.lip_horizon = lip_horizon
        self.warm_history = warm_history
        x = ch.lobatto(self.d)
        self.x = x
        self.Q = ch.cumulative_integration(self.d)
        self.V2C = ch.vals_to_coeffs(self.d)
        df = 2 * self.d
        self.xf = ch.lobatto(df)
        self.Qf = ch.cumulative_integration(df)
        self.V2Cf = ch.vals_to_coeffs(df)
        kc = 2 * (self.d + 1)
        self.checks = np.cos((2 * np.arange(kc) + 1) * np.pi / (2 * kc))
        self.E_fine = ch.interpolation_matrix(self.d, self.xf)
        self.diag = {"steps": 0, "iterations": {}, "max_ratio": 0.0, "escalations": 0,
                     "halvings": 0, "residual_rejections": 0, "max_residual": 0.0,
                     "step_log": [], "lipschitz": {}, "floor_steps": 0,
                     "unverified_steps": 0}
        self._nu_end = None

    # ------------------------------------------------------------ quadrature
    def _window_edges(self, nodes, t):
        """Cells of every node window [t_j - Delta, t_j], vectorised over nodes.

        Per window this is the rule of `quadrature.cell_edges` with t added
        as a breakpoint: consecutive path breakpoints, tiny cells merged,
        gaps wider than Delta/subcells split into equal parts.
        Returns (lo, hi, label) of all cells, grouped by node.
        """
        D = self.sys.Delta
        K = nodes.size
        P = self.store.bps[:self.store.m + 1]
        a = nodes - D
        lo_i = np.searchsorted(P, a, side="right")
        hi_i = np.searchsorted(P, nodes, side="left")
        cnt = hi_i - lo_i
        total = int(cnt.sum())
        starts = np.cumsum(cnt) - cnt
        pidx = np.arange(total) - np.repeat(starts, cnt) + np.repeat(lo_i, cnt)
        inner = (a < t) & (t < nodes)
        ar = np.arange(K)
        vals = np.concatenate([a, nodes, P[pidx], np.full(int(inner.sum()), t)])
        labs = np.concatenate([ar, ar, np.repeat(ar, cnt), np.flatnonzero(inner)])
        order = np.lexsort((vals, labs))
        vals, labs = vals[order], labs[order]
        same = labs[1:] == labs[:-1]
        tiny = same & (np.diff(vals) <= 1e-14 * D)
        keep = np.concatenate([[True], ~tiny])
        vals, labs = vals[keep], labs[keep]
        last = np.flatnonzero(np.concatenate([labs[1:] != labs[:-1], [True]]))
        vals[last] = nodes[labs[last]]
        pair = labs[1:] == labs[:-1]
        lo, hi, lab = vals[:-1][pair], vals[1:][pair], labs[:-1][pair]
        gaps = hi - lo
        m = np.maximum(1, np.ceil(gaps / (D / self.cfg.subcells) * (1.0 - 1e-12))).astype(int)
        if np.all(m == 1):
            return lo, hi, lab
        step = np.repeat(gaps / m, m)
        k = np.arange(m.sum()) - np.repeat(np.cumsum(m) - m, m)
        base = np.repeat(lo, m)
        nlo = base + k * step
        nhi = base + (k + 1) * step
        ends = np.cumsum(m) - 1
        nhi[ends] = hi
        return nlo, nhi, np.repeat(lab, m)

    def _cells(self, nodes, t, h, q, with_current=True):
        """Quadrature cells of every node window, split into a fixed past part and the current step."""
        sys, store = self.sys, self.store
        K = nodes.size
        gx, gw = gauss_rule(q)
        P = store.bps[:store.m + 1]
        lo, hi, lab = self._window_edges(nodes, t)
        cur = lo >= t
        p, n = sys.p, sys.n
        nu_past = np.zeros((K, p))
        past = ~cur
        if past.any():
            plo, phi_, plab = lo[past], hi[past], lab[past]
            pid = np.clip(np.searchsorted(P, 0.5 * (plo + phi_), side="right") - 1, 0, store.m - 1)
            full = (plo == P[pid]) & (phi_ == P[pid + 1])
            half = 0.5 * (phi_ - plo)
            w = (half[:, None] * gw).ravel()
            idx = np.repeat(plab, q)
            r = np.empty(w.size)
            xv = np.empty((w.size, n))
            fq = np.repeat(full, q)
            # whole pieces reuse cached values at their Gauss nodes
            if full.any():
                sc, xc = store.gauss_values(q, pid[full])
                r[fq] = sc.ravel()
                xv[fq] = xc.reshape(-1, n)
            if not full.all():
                cut = ~full
                sc = ((0.5 * (plo[cut] + phi_[cut]))[:, None] + half[cut][:, None] * gx).ravel()
                r[~fq] = sc
                xv[~fq] = store.eval(sc)
            tn = nodes[idx]
            vals = sys.kernel(tn, r - tn, xv) * w[:, None]
            for c in range(p):
                nu_past[:, c] = np.bincount(idx, weights=vals[:, c], minlength=K)
        if with_current and cur.any():
            clo, chi = lo[cur], hi[cur]
            half = 0.5 * (chi - clo)
            r = ((0.5 * (clo + chi))[:, None] + half[:, None] * gx).ravel()
            w = (half[:, None] * gw).ravel()
            idx = np.repeat(lab[cur], q)
        else:
            r = np.empty(0)
            w = np.empty(0)
            idx = np.empty(0, dtype=int)
        u = (2.0 * (r - t) - h) / h
        E = ch.interpolation_matrix(self.d, np.clip(u, -1.0, 1.0))
        c = _Cells(nodes, nu_past, idx, r, w, E)
        if self.lin and r.size:
            tn = nodes[idx]
            Km = sys.kernel.matrix(tn, r - tn)  # (Pc, p, n)
            M = np.zeros((K, p, n, self.d + 1))
            np.add.at(M, idx, w[:, None, None, None] * Km[..., None] * E[:, None, None, :])
            c.M = M
        return c

    def _nu(self, cells, Y):
        if self.zero_kernel:
            return np.zeros((cells.nodes.size, self.sys.p))
        if cells.cur_s.size == 0:
            return cells.nu_past
        if self.lin:
            return cells.nu_past + np.einsum("jpnm,mn->jp", cells.M, Y)
        tn = cells.nodes[cells.cur_idx]
        eta = cells.cur_E @ Y
        vals = self.sys.kernel(tn, cells.cur_s - tn, eta)
        out = np.array(cells.nu_past)
        np.add.at(out, cells.cur_idx, cells.cur_w[:, None] * vals)
        return out

    def _delayed(self, nodes):
        sys, store = self.sys, self.store
        K = nodes.size
        out = np.empty((K, sys.ell, sys.n))
        for i, tau in enumerate(sys.taus[1:]):
            r = nodes - tau
            vals = store.eval(r[:-1], "right") if K > 1 else np.empty((0, sys.n))
            last = store.eval(r[-1:], "left")
            out[:, i, :] = np.concatenate([vals, last]) if K > 1 else last
        return out

    def _rhs(self, nodes, Y, delayed, nu):
        xi = np.concatenate([Y[:, None, :], delayed], axis=1)
        with np.errstate(all="ignore"):
            F = _g(self.sys, nodes, xi, nu)
        if not np.all(np.isfinite(F)):
            raise EvaluationError("non-finite right-hand side")
        return F

    # -------------------------------------------------------------- planning
    def _plan(self, t, xi):
        sys, cfg = self.sys, self.cfg
        sup = max(self.store.local_sup(t - sys.Delta, t), float(np.abs(xi).max()))
        R = 2.0 * (1.0 + sup)
        rho = R if cfg.lipschitz_margin is None else sup + cfg.lipschitz_margin * (1.0 + sup)
        L = cached_lipschitz(sys, rho, self.lip_horizon, cfg.lipschitz_probes)
        self.diag["lipschitz"][repr(_radius_bucket(rho))] = L
        nodes = np.array([t])
        if self.zero_kernel:
            nu = np.zeros((1, sys.p))
        elif self._nu_end is not None and self._nu_end[0] == t:
            nu = self._nu_end[1][None, :]
        else:
            nu = self._cells(nodes, t, 1.0, cfg.quad_order, with_current=False).nu_past
        delayed = np.empty((1, sys.ell, sys.n))
        for i, tau in enumerate(sys.taus[1:]):
            delayed[0, i] = self.store.eval(np.array([t - tau]), "right")[0]
        f_now = float(np.abs(self._rhs(nodes, xi[None, :], delayed, nu)).max())
        F_R = f_now + L * R
        h = min(sys.taus[1], self.T - t)
        if L > 0:
            h = min(h, cfg.lambda_max / L)
        if F_R > 0:
            h = min(h, (R - sup) / F_R)
        return h, sup, L

    # ------------------------------------------------------------------ step
    def _guess(self, t, h, nodes, xi):
        store = self.store
        i = store.m - 1
        prev_is_x = i >= store.m_hist or self.warm_history
        width = store.bps[i + 1] - store.bps[i]
        if prev_is_x and store.bps[i + 1] == t and h <= 1.5 * width:
            Y = store.eval_piece(i, nodes)
        else:
            Y = np.repeat(xi[None, :], nodes.size, axis=0)
        Y[0] = xi
        return Y

    def _picard(self, t, h, xi, q):
        """Picard iteration on the coarse nodes.

        Quadrature cells and delayed values are built once for the fine
        residual grid, whose even nodes are the coarse ones.
        """
        cfg = self.cfg
        nodes = t + 0.5 * h * (1.0 + self.x)
        nodes[0], nodes[-1] = t, t + h
        fine = t + 0.5 * h * (1.0 + self.xf)
        fine[::2] = nodes
        delayed_f = self._delayed(fine)
        delayed = delayed_f[::2]
        cells_f = None if self.zero_kernel else self._cells(fine, t, h, q)
        cells = None if cells_f is None else cells_f.take(np.arange(0, fine.size, 2))
        Y = self._guess(t, h, nodes, xi)
        prev = None
        ratio = 0.0
        half_h = 0.5 * h
        fine_data = (fine, delayed_f, cells_f)
        for it in range(1, cfg.max_picard_iters + 1):
            nu = self._nu(cells, Y) if cells is not None else np.zeros((nodes.size, self.sys.p))
            F = self._rhs(nodes, Y, delayed, nu)
            Y_new = xi[None, :] + half_h * (self.Q @ F)
            Y_new[0] = xi
            diff = float(np.abs(Y_new - Y).max())
            scale = 1.0 + float(np.abs(Y_new).max())
            floor = 1e3 * np.finfo(float).eps * scale
            if prev is not None and prev > floor and diff > floor:
                ratio = max(ratio, diff / prev)
            Y = Y_new
            if diff <= cfg.picard_tol * scale:
                return Y, nodes, fine_data, cells, it, ratio, None
            if ratio > cfg.lambda_max + cfg.contraction_slack:
                return Y, nodes, fine_data, cells, it, ratio, "contraction"
            prev = diff
        return Y, nodes, fine_data, cells, cfg.max_picard_iters, ratio, "stall"

    def _residual(self, t, h, xi, Y, fine_data, nu_coarse):
        """Integral-equation residual of the accepted interpolant at off-node checkpoints."""
        nodes, delayed, cells_f = fine_data
        Yf = self.E_fine @ Y
        Yf[::2] = Y
        if self.zero_kernel:
            nu = np.zeros((nodes.size, self.sys.p))
        else:
            nu = np.empty((nodes.size, self.sys.p))
            nu[::2] = nu_coarse
            nu[1::2] = self._nu(cells_f.take(np.arange(1, nodes.size, 2)), Y)
        F = self._rhs(nodes, Yf, delayed, nu)
        I = xi[None, :] + 0.5 * h * (self.Qf @ F)
        ci = ch.clenshaw((self.V2Cf @ I).T, self.checks[:, None, None])
        cy = ch.clenshaw((self.V2C @ Y).T, self.checks[:, None, None])
        return float(np.abs(ci - cy).max())

    def _quad_probe(self, t, h, Y, nu_last, q):
        node = np.array([t + h])
        a = nu_last
        b = self._nu(self._cells(node, t, h, q + 2), Y)[0]
        return float(np.abs(a - b).max()), float(np.abs(a).max())

    # ------------------------------------------------------------------- run
    def _attempt(self, t, h, xi, sup, at_floor=False):
        """Try one step; returns (result, failure reason or None).

        At the step floor a residual above the bound cannot be cured by
        halving, so the converged iterate is kept and counted as unverified.
        """
        cfg, diag = self.cfg, self.diag
        q = cfg.quad_order
        while True:
            try:
                Y, nodes, fine_data, cells, its, ratio, fail = self._picard(t, h, xi, q)
            except (EvaluationError, ArithmeticError, FloatingPointError):
                return None, "fault"
            if fail is not None:
                return None, fail
            nu = None if cells is None else self._nu(cells, Y)
            if cells is not None and q == cfg.quad_order:
                err, mag = self._quad_probe(t, h, Y, nu[-1], q)
                if err > cfg.quad_tol * (1.0 + mag):
                    q = cfg.quad_order_escalated
                    diag["escalations"] += 1
                    continue
            try:
                res = self._residual(t, h, xi, Y, fine_data, nu)
            except (EvaluationError, ArithmeticError):
                res = math.inf
            bound = cfg.residual_factor * cfg.picard_tol * (1.0 + max(sup, float(np.abs(Y).max())))
            if not res <= bound:
                if at_floor and math.isfinite(res):
                    diag["unverified_steps"] += 1
                else:
                    diag["residual_rejections"] += 1
                    return None, "residual"
            return (Y, nu, its, ratio, q, res), None

    def run(self):
        cfg, store, diag = self.cfg, self.store, self.diag
        t = self.t0
        xi = self.xi0.copy()
        knots, values = [t], [xi.copy()]
        B = cfg.blowup_threshold
        status, escape, message = Status.COMPLETED, None, ""
        k_next = 0
        floor_run = 0
        tol_t = 1e-14 * max(1.0, abs(self.T))
        if float(np.abs(xi).max()) > B:
            status, escape, message = Status.BLOWUP, t, "initial state exceeds the blow-up threshold"
        while status == Status.COMPLETED and t < self.T - tol_t:
            try:
                h, sup, L = self._plan(t, xi)
            except (EvaluationError, ArithmeticError) as exc:
                status, message = Status.STEP_FLOOR, f"evaluation fault while planning: {exc}"
                break
            # planned steps never go below the floor; a long run of floor steps
            # is reported as a step-floor failure
            if h < self.min_step:
                h = self.min_step
                floor_run += 1
                diag["floor_steps"] += 1
                if floor_run > cfg.max_floor_steps:
                    status, message = Status.STEP_FLOOR, f"step floor reached at t={t:.17g}"
                    break
            else:
                floor_run = 0
            while self.schedule[k_next] <= t + tol_t:
                k_next += 1
            nb = self.schedule[k_next]
            if t + h * (1.0 + cfg.snap_rtol) >= nb:
                h, t_end = nb - t, nb
            else:
                t_end = t + h
            while True:
                result, fail = self._attempt(t, h, xi, sup, at_floor=h <= self.min_step)
                if fail is None:
                    break
                if h <= self.min_step:
                    status = Status.PICARD_STALL if fail in ("stall", "contraction") else Status.STEP_FLOOR
                    message = f"step at the floor failed after {fail} at t={t:.17g}"
                    break
                h = max(0.5 * h, self.min_step)
                t_end = t + h
                diag["halvings"] += 1
            if fail is not None:
                break
            Y, nu, its, ratio, q, res = result
            if np.all(Y == Y[0]):
                # constant steps get exact coefficients
                cf = np.zeros((Y.shape[1], self.d + 1))
                cf[:, 0] = Y[0]
            else:
                cf = (self.V2C @ Y).T
            store.append(t, t_end, cf)
            self._nu_end = None if nu is None else (t_end, nu[-1].copy())
            diag["steps"] += 1
            diag["iterations"][its] = diag["iterations"].get(its, 0) + 1
            diag["max_ratio"] = max(diag["max_ratio"], ratio)
            diag["max_residual"] = max(diag["max_residual"], res)
            diag["step_log"].append((t, h, its, ratio, q, res, L))
            xi = Y[-1].copy()
            knots.append(t_end)
            values.append(xi.copy())
            t = t_end
            if store.bound[store.m - 1] > B:
                crossing = self._first_crossing(store.m - 1, knots[-2], t_end, B)
                if crossing is not None:
                    status, escape = Status.BLOWUP, crossing
                    message = f"|x| exceeded {B:g}"
        if len(knots) > 1:
            traj = PiecewisePoly(np.array(knots), store.cf[store.m_hist:store.m, :, :self.d + 1],
                                 store.nat[store.m_hist:store.m], marks=[(self.t0, self.xi0)])
        else:
            # nothing accepted: a degenerate constant piece carries xi0
            traj = PiecewisePoly([self.t0, self.t0 + self.min_step], self.xi0[None, :, None],
                                 marks=[(self.t0, self.xi0)])
        return status, escape, message, traj, np.array(knots), np.array(values)

    def _first_crossing(self, i, a, b, B):
        u = np.linspace(a, b, 257)
        vals = np.abs(self.store.eval_piece(i, u)).max(axis=1)
        above = np.flatnonzero(vals >= B)
        if above.size == 0:
            return None
        j = above[0]
        if j == 0:
            return float(a)
        lo, hi = u[j - 1], u[j]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if np.abs(self.store.eval_piece(i, np.array([mid]))).max() >= B:
                hi = mid
            else:
                lo = mid
        return float(hi)


def _base_points(t0, phi):
    return np.concatenate([[t0], t0 + phi.breakpoints[1:-1]])


def _finish(sys, integ, ic, t0, T, cfg, result):
    status, escape, message, traj, knots, values = result
    diag = integ.diag
    diag["schedule"] = integ.schedule.tolist()
    diag["config_digest"] = cfg.digest()
    diag["system"] = sys.name
    return SolveOutcome(traj, status, t0, T, ic, escape, message, diag, knots, values,
                        integ.base_points, integ.lip_horizon)


def solve(sys, t0, ic, T, cfg=None):
    """Integrate from (xi0, phi) at t0 up to T (or until a failure / blow-up)."""
    cfg = cfg or SolverConfig()
    t0, T = float(t0), float(T)
    if not T > t0:
        raise ValueError("T must exceed t0")
    integ = _Integrator(sys, t0, ic.xi0, ic.phi, T, cfg, _base_points(t0, ic.phi), None,
                        max(T, abs(t0)), False)
    return _finish(sys, integ, ic, t0, T, cfg, integ.run())


def solve_from(sys, outcome, t1, T2, cfg=None):
    """Restart at t1 from (x(t1), x_{t1}) taken from an earlier outcome."""
    cfg = cfg or SolverConfig()
    t1, T2 = float(t1), float(T2)
    if not (outcome.t0 <= t1 <= outcome.T_reached):
        raise ValueError("restart time outside the solved span")
    if not T2 > t1:
        raise ValueError("T2 must exceed t1")
    if t1 == outcome.t0:
        ic = outcome.ic
        integ = _Integrator(sys, t1, ic.xi0, ic.phi, T2, cfg, outcome.base_points, None,
                            max(outcome.lip_horizon, T2), False)
        return _finish(sys, integ, ic, t1, T2, cfg, integ.run())
    xi1 = outcome.value(t1)
    phi1 = outcome.path.segment(t1).without_marks()
    ic1 = InitialCondition(xi1, phi1)
    forced = outcome.knots[(outcome.knots > t1) & (outcome.knots <= outcome.T_reached)]
    integ = _Integrator(sys, t1, xi1, phi1, T2, cfg, outcome.base_points, forced,
                        max(outcome.lip_horizon, T2), True)
    return _finish(sys, integ, ic1, t1, T2, cfg, integ.run())


def with_tolerance(cfg, **changes):
    return replace(cfg, **changes)
