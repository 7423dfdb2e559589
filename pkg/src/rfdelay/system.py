"""Right-hand sides with discrete and distributed delays.

A system reads

    x'(t) = g(t, x(t - tau_0), ..., x(t - tau_l), nu(t)),
    nu(t) = int_{-Delta}^{0} G(t, s, x_t(s)) ds,

with ``tau_0 = 0 < tau_1 < ... < tau_l = Delta``.  A linear kernel has
``G(t, s, eta) = K(t, s) eta``.  Systems tagged ``AffineMixed17`` are affine
in the delayed values,

    g = g0(t, x(t), nu) + G1(t, x(t), nu) (x(t - tau_1), ..., x(t - tau_l)),

and have a linear kernel.
"""

import configparser
import io
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.stats import qmc

from .expr import EvaluationError, Expression

GENERAL = "General11"
AFFINE = "AffineMixed17"
CLASSES = (GENERAL, AFFINE)


@dataclass(frozen=True)
class DelaySpec:
    Delta: float
    taus: tuple

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "Delta", float(self.Delta))
        if not self.Delta > 0:
            raise ValueError("Delta must be positive")
        if len(taus) < 2 or taus[0] != 0.0:
            raise ValueError("taus must start with 0 and contain the maximum delay")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("taus must be strictly increasing")
        if taus[-1] != self.Delta:
            raise ValueError("the largest delay must equal Delta")

    @property
    def ell(self):
        return len(self.taus) - 1


def _as_column(v, size):
    v = np.asarray(v, float)
    return np.broadcast_to(v, (size,)) if v.ndim == 0 else v


class PointwiseMap:
    """The map g(t, xi_{0:l}, nu), vectorised over leading axes.

    `components` is a list of expressions (one per state component) or a
    callable ``(t, xi, nu) -> (N, n)``.  `g0` / `G1` give the optional affine
    split: `g0` a list of n expressions, `G1` an n x (l*n) nested list.
    """

    def __init__(self, components, n, ell, p, g0=None, G1=None):
        self.n, self.ell, self.p = n, ell, p
        if callable(components):
            self._fn = components
            self.exprs = None
        else:
            self.exprs = [Expression(c) for c in components]
            if len(self.exprs) != n:
                raise ValueError(f"need {n} component expressions")
            self._fn = None
        self.g0 = None if g0 is None else [Expression(c) for c in g0]
        self.G1 = None if G1 is None else [[Expression(c) for c in row] for row in G1]
        if self.g0 is not None and (len(self.g0) != n or len(self.G1) != n
                                    or any(len(r) != ell * n for r in self.G1)):
            raise ValueError("affine split has the wrong shape")

    @property
    def has_affine_split(self):
        return self.g0 is not None

    def __call__(self, t, xi, nu):
        xi = np.asarray(xi, float)
        nu = np.asarray(nu, float)
        N = xi.shape[0]
        t = _as_column(t, N)
        if self._fn is not None:
            out = np.asarray(self._fn(t, xi, nu), float).reshape(N, self.n)
        else:
            env = {"t": t, "x": xi[:, 0, :], "xi": xi, "nu": nu}
            out = np.stack([_as_column(e(env), N) for e in self.exprs], axis=1)
        return out

    def split(self, t, xi0, nu):
        """Return (g0, G1) with shapes (N, n) and (N, n, l*n)."""
        if self.g0 is None:
            raise ValueError("no affine split declared")
        xi0 = np.asarray(xi0, float)
        N = xi0.shape[0]
        t = _as_column(t, N)
        env = {"t": t, "x": xi0, "nu": np.asarray(nu, float)}
        g0 = np.stack([_as_column(e(env), N) for e in self.g0], axis=1)
        G1 = np.stack([np.stack([_as_column(e(env), N) for e in row], axis=1) for row in self.G1], axis=1)
        return g0, G1

    def split_eval(self, t, xi, nu):
        g0, G1 = self.split(t, xi[:, 0, :], nu)
        rest = xi[:, 1:, :].reshape(xi.shape[0], -1)
        return g0 + np.einsum("nij,nj->ni", G1, rest)


class LinearKernel:
    """K(t, s): p x n matrix of expressions in t and s; optional envelope M(s)."""

    kind = "linear"

    def __init__(self, entries, envelope=None):
        self.entries = [[Expression(e) for e in row] for row in entries]
        self.p = len(self.entries)
        self.n = len(self.entries[0])
        self.envelope = None if envelope is None else Expression(envelope)

    @property
    def is_zero(self):
        return all(e.is_zero() for row in self.entries for e in row)

    def matrix(self, t, s):
        s = np.asarray(s, float)
        N = s.shape[0]
        env = {"t": _as_column(t, N), "s": s}
        return np.stack(
            [np.stack([_as_column(e(env), N) for e in row], axis=1) for row in self.entries], axis=1
        )

    def __call__(self, t, s, eta):
        return np.einsum("npj,nj->np", self.matrix(t, s), np.asarray(eta, float))


class GeneralKernel:
    """G(t, s, eta) as p expressions in t, s, x[j] (= eta_j); optional envelopes."""

    kind = "general"

    def __init__(self, components, n, envelope=None, lipschitz=None):
        self.components = [Expression(c) for c in components]
        self.p = len(self.components)
        self.n = n
        self.envelope = None if envelope is None else Expression(envelope)
        self.lipschitz = None if lipschitz is None else Expression(lipschitz)

    @property
    def is_zero(self):
        return all(e.is_zero() for e in self.components)

    def __call__(self, t, s, eta):
        s = np.asarray(s, float)
        N = s.shape[0]
        env = {"t": _as_column(t, N), "s": s, "x": np.asarray(eta, float)}
        return np.stack([_as_column(e(env), N) for e in self.components], axis=1)


@dataclass(frozen=True, eq=False)
class SystemDef:
    name: str
    n: int
    p: int
    delays: DelaySpec
    g: PointwiseMap
    kernel: object
    cls: str = GENERAL

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"class must be one of {CLASSES}")
        if self.kernel.p != self.p or self.kernel.n != self.n:
            raise ValueError("kernel shape does not match (p, n)")
        if self.g.n != self.n or self.g.p != self.p or self.g.ell != self.delays.ell:
            raise ValueError("pointwise map shape does not match the system")
        if self.cls == AFFINE:
            if not isinstance(self.kernel, LinearKernel):
                raise ValueError("AffineMixed17 requires a linear kernel")
            if not self.g.has_affine_split:
                raise ValueError("AffineMixed17 requires an affine split (g0, G1)")
        self._check_names()

    def _check_names(self):
        ell, n, p = self.delays.ell, self.n, self.p

        def ok_g(name, idx):
            if name == "t":
                return True
            if name == "x":
                return idx[0] <= n
            if name == "xi":
                return idx[0] <= ell and idx[1] <= n
            if name == "nu":
                return idx[0] <= p
            return False

        def ok_kernel(name, idx):
            return name in ("t", "s") or (name == "x" and idx[0] <= n and isinstance(self.kernel, GeneralKernel))

        def ok_env(name, idx):
            return name in ("s", "R", "T")

        groups = []
        if self.g.exprs is not None:
            groups.append((self.g.exprs, ok_g))
        if self.g.has_affine_split:
            groups.append((self.g.g0 + [e for row in self.g.G1 for e in row],
                           lambda nm, ix: ok_g(nm, ix) and nm != "xi"))
        if isinstance(self.kernel, LinearKernel):
            groups.append(([e for row in self.kernel.entries for e in row], ok_kernel))
        else:
            groups.append((self.kernel.components, ok_kernel))
        envs = [e for e in (self.kernel.envelope, getattr(self.kernel, "lipschitz", None)) if e is not None]
        groups.append((envs, ok_env))
        for exprs, ok in groups:
            for e in exprs:
                for name, idx in e.free_vars():
                    if not ok(name, idx):
                        raise ValueError(f"variable {name}{list(idx)} not allowed in {e.text!r}")

    @property
    def Delta(self):
        return self.delays.Delta

    @property
    def taus(self):
        return self.delays.taus

    @property
    def ell(self):
        return self.delays.ell

    def __repr__(self):
        return f"SystemDef({self.name!r}, n={self.n}, p={self.p}, taus={self.taus}, {self.cls})"


def rhs(sys, t, xi_all, nu):
    """g(t, xi_{0:l}, nu) at a single point; `xi_all` is flat or (l+1, n)."""
    xi = np.asarray(xi_all, float).reshape(1, sys.ell + 1, sys.n)
    nu = np.asarray(nu, float).reshape(1, sys.p)
    if sys.cls == AFFINE:
        out = sys.g.split_eval(t, xi, nu)[0]
    else:
        out = sys.g(t, xi, nu)[0]
    if not np.all(np.isfinite(out)):
        raise EvaluationError("non-finite right-hand side")
    return out


def _rng_points(seed, count, dim):
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    return sampler.random(count)


def check_affine_split(sys, probes=1000, R=2.0, seed=0, rtol=1e-14):
    """Direct evaluation and the declared affine split agree on random probes."""
    if not sys.g.has_affine_split or sys.g.exprs is None:
        return True
    t, xi, nu = _random_arguments(sys, probes, R, seed)
    a = sys.g(t, xi, nu)
    b = sys.g.split_eval(t, xi, nu)
    return bool(np.all(np.abs(a - b) <= rtol * (1.0 + np.abs(a) + np.abs(b)) * 10))


def check_affine(sys, probes=1000, R=2.0, seed=0, rtol=1e-12):
    """Numerically test that g is affine in the delayed values xi_{1:l}.

    g(xi0, a*u + b*v) must equal a*g(xi0, u) + b*g(xi0, v) - (a+b-1)*g(xi0, 0).
    """
    rng = np.random.default_rng(seed)
    t, xi, nu = _random_arguments(sys, probes, R, seed)
    zeta = np.array(xi)
    zeta[:, 1:, :] = rng.uniform(-R, R, size=zeta[:, 1:, :].shape)
    zero = np.array(xi)
    zero[:, 1:, :] = 0.0
    a = rng.uniform(-2, 2, size=(probes, 1, 1))
    b = rng.uniform(-2, 2, size=(probes, 1, 1))
    mix = np.array(xi)
    mix[:, 1:, :] = a * xi[:, 1:, :] + b * zeta[:, 1:, :]
    g = sys.g
    lhs = g(t, mix, nu)
    rhs_ = a[:, 0] * g(t, xi, nu) + b[:, 0] * g(t, zeta, nu) - (a[:, 0] + b[:, 0] - 1) * g(t, zero, nu)
    scale = 1.0 + np.abs(lhs) + np.abs(rhs_)
    return bool(np.all(np.abs(lhs - rhs_) <= rtol * scale * 100))


def _random_arguments(sys, count, R, seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 10.0, size=count)
    xi = rng.uniform(-R, R, size=(count, sys.ell + 1, sys.n))
    nu = rng.uniform(-R, R, size=(count, sys.p))
    return t, xi, nu


# ----------------------------------------------------------------- envelopes
_GL_S = 64


def _s_nodes(Delta, cells=16, q=8):
    x, w = leggauss(q)
    edges = np.linspace(-Delta, 0.0, cells + 1)
    a, b = edges[:-1, None], edges[1:, None]
    s = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
    ws = (0.5 * (b - a) * w).ravel()
    return s, ws


def _envelope_values(expr, s, R, T):
    return np.broadcast_to(np.asarray(expr({"s": s, "R": R, "T": T}), float), s.shape)


def kernel_bounds(sys, R, T, seed=0, t_samples=9, eta_samples=64):
    """(||M||_1, ||Lhat||_1): integrated bounds on |G| and its eta-Lipschitz constant."""
    k = sys.kernel
    s, ws = _s_nodes(sys.Delta)
    ts = np.linspace(0.0, T, t_samples)
    if k.is_zero:
        return 0.0, 0.0
    if isinstance(k, LinearKernel):
        if k.envelope is not None:
            m = _envelope_values(k.envelope, s, R, T)
        else:
            m = np.zeros_like(s)
            for t in ts:
                m = np.maximum(m, np.abs(k.matrix(t, s)).sum(axis=2).max(axis=1))
        m1 = float(np.dot(ws, m))
        return m1 * R, m1
    # general kernel
    pts = _rng_points(seed, eta_samples, sys.n) * 2 * R - R
    pts = np.vstack([pts, np.full((1, sys.n), R), np.full((1, sys.n), -R)])
    S = np.repeat(s, pts.shape[0])
    E = np.tile(pts, (s.size, 1))
    if k.envelope is not None:
        mb = _envelope_values(k.envelope, s, R, T)
    else:
        mb = np.zeros_like(s)
        for t in ts:
            vals = np.abs(k(t, S, E)).max(axis=1).reshape(s.size, -1).max(axis=1)
            mb = np.maximum(mb, vals)
    if k.lipschitz is not None:
        lb = _envelope_values(k.lipschitz, s, R, T)
    else:
        h = 1e-6 * (1.0 + R)
        lb = np.zeros_like(s)
        for t in ts:
            rows = np.zeros((S.size, k.p))
            for j in range(sys.n):
                ep, em = E.copy(), E.copy()
                ep[:, j] += h
                em[:, j] -= h
                rows += np.abs(k(t, S, ep) - k(t, S, em)) / (2 * h)
            lb = np.maximum(lb, rows.max(axis=1).reshape(s.size, -1).max(axis=1))
    return float(np.dot(ws, mb)), float(np.dot(ws, lb))


def verify_envelopes(sys, R, T, seed=0):
    """Check declared envelopes dominate sampled |G| and its difference quotients."""
    k = sys.kernel
    s, _ = _s_nodes(sys.Delta, cells=8, q=4)
    ts = np.linspace(0.0, T, 5)
    report = {"magnitude": True, "lipschitz": True, "checked": []}
    if k.envelope is None and getattr(k, "lipschitz", None) is None:
        return report
    if isinstance(k, LinearKernel):
        m = _envelope_values(k.envelope, s, R, T)
        for t in ts:
            norms = np.abs(k.matrix(t, s)).sum(axis=2).max(axis=1)
            report["magnitude"] &= bool(np.all(norms <= m * (1 + 1e-12) + 1e-14))
        report["checked"].append("magnitude")
        return report
    pts = _rng_points(seed, 32, sys.n) * 2 * R - R
    pts2 = _rng_points(seed + 1, 32, sys.n) * 2 * R - R
    S = np.repeat(s, pts.shape[0])
    E1 = np.tile(pts, (s.size, 1))
    E2 = np.tile(pts2, (s.size, 1))
    for t in ts:
        g1 = k(t, S, E1)
        if k.envelope is not None:
            m = np.repeat(_envelope_values(k.envelope, s, R, T), pts.shape[0])
            report["magnitude"] &= bool(np.all(np.abs(g1).max(axis=1) <= m * (1 + 1e-12) + 1e-14))
        if k.lipschitz is not None:
            lip = np.repeat(_envelope_values(k.lipschitz, s, R, T), pts.shape[0])
            dq = np.abs(g1 - k(t, S, E2)).max(axis=1) / np.abs(E1 - E2).max(axis=1)
            report["lipschitz"] &= bool(np.all(dq <= lip * (1 + 1e-9) + 1e-14))
    report["checked"] = [n for n, e in (("magnitude", k.envelope), ("lipschitz", k.lipschitz)) if e is not None]
    return report


def lipschitz_estimate(sys, R, T, probes=256, seed=0):
    """Heuristic local Lipschitz constant of the full right-hand side on B_R over [0, T].

    Difference quotients of g are sampled on a scrambled Sobol set (plus the
    centre and two ball corners) and the worst row sum is inflated by 2.
    The distributed part enters through the integrated kernel bounds.
    """
    if R <= 0 or T <= 0:
        raise ValueError("R and T must be positive")
    ell, n, p = sys.ell, sys.n, sys.p
    nu_bound, lam = kernel_bounds(sys, R, T, seed)
    nu_bound = max(nu_bound, 1e-12)
    dim = 1 + (ell + 1) * n + p
    u = _rng_points(seed, probes, dim)
    extra = np.vstack([np.full(dim, 0.5), np.ones(dim), np.zeros(dim)])
    u = np.vstack([u, extra])
    t = u[:, 0] * T
    xi = (u[:, 1:1 + (ell + 1) * n] * 2 - 1).reshape(-1, ell + 1, n) * R
    nu = (u[:, 1 + (ell + 1) * n:] * 2 - 1) * nu_bound
    h = 1e-6 * (1.0 + R)
    row_xi = np.zeros((u.shape[0], n))
    row_nu = np.zeros((u.shape[0], n))
    g = sys.g
    for i in range(ell + 1):
        for j in range(n):
            xp, xm = xi.copy(), xi.copy()
            xp[:, i, j] += h
            xm[:, i, j] -= h
            row_xi += np.abs(g(t, xp, nu) - g(t, xm, nu)) / (2 * h)
    for j in range(p):
        hp = 1e-6 * (1.0 + nu_bound)
        up, um = nu.copy(), nu.copy()
        up[:, j] += hp
        um[:, j] -= hp
        row_nu += np.abs(g(t, xi, up) - g(t, xi, um)) / (2 * hp)
    total = row_xi + row_nu * lam
    return 2.0 * float(total.max())


# ------------------------------------------------------------------- builders
def build_system(name, n, p, Delta, taus, g, kernel, cls=GENERAL, g0=None, G1=None):
    delays = DelaySpec(Delta, taus)
    gm = PointwiseMap(g, n, delays.ell, p, g0=g0, G1=G1)
    return SystemDef(name, n, p, delays, gm, kernel, cls)


def _zero_linear(p=1, n=1):
    return LinearKernel([["0"] * n for _ in range(p)], envelope="0")


CATALOG_NAMES = (
    "frozen", "decay_discrete", "distributed_mean", "affine_mixed",
    "square_delay", "expgrow", "quadratic_blowup",
)


def catalog(name):
    """Built-in systems (all scalar with Delta = 1)."""
    if name == "frozen":
        return build_system(name, 1, 1, 1.0, (0, 1), ["0"], _zero_linear(), AFFINE,
                            g0=["0"], G1=[["0"]])
    if name == "decay_discrete":
        return build_system(name, 1, 1, 1.0, (0, 1), ["-xi[1][1]"], _zero_linear(), AFFINE,
                            g0=["0"], G1=[["-1"]])
    if name == "distributed_mean":
        return build_system(name, 1, 1, 1.0, (0, 1), ["nu[1]"],
                            LinearKernel([["1"]], envelope="1"), AFFINE, g0=["nu[1]"], G1=[["0"]])
    if name == "affine_mixed":
        return build_system(
            name, 1, 1, 1.0, (0, 1), ["-x[1]^3 + (1 + tanh(nu[1]))*xi[1][1]"],
            LinearKernel([["exp(s)"]], envelope="exp(s)"), AFFINE,
            g0=["-x[1]^3"], G1=[["1 + tanh(nu[1])"]],
        )
    if name == "square_delay":
        return build_system(name, 1, 1, 1.0, (0, 1), ["xi[1][1]^2"],
                            GeneralKernel(["0"], 1, envelope="0", lipschitz="0"), GENERAL)
    if name == "expgrow":
        return build_system(name, 1, 1, 1.0, (0, 1), ["x[1]"], _zero_linear(), AFFINE,
                            g0=["x[1]"], G1=[["0"]])
    if name == "quadratic_blowup":
        return build_system(name, 1, 1, 1.0, (0, 1), ["x[1]^2"], _zero_linear(), AFFINE,
                            g0=["x[1]^2"], G1=[["0"]])
    raise KeyError(f"unknown catalog system {name!r}; known: {', '.join(CATALOG_NAMES)}")


# ---------------------------------------------------------------- text files
def system_to_text(sys):
    """Serialise an expression-defined system to the INI-style system file format."""
    if sys.g.exprs is None:
        raise ValueError("only expression-defined systems can be written")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["system"] = {
        "name": sys.name, "n": str(sys.n), "p": str(sys.p),
        "delta": repr(sys.Delta), "taus": ", ".join(repr(t) for t in sys.taus), "class": sys.cls,
    }
    cp["g"] = {f"g{i + 1}": e.text for i, e in enumerate(sys.g.exprs)}
    if sys.g.has_affine_split:
        sec = {f"g0_{i + 1}": e.text for i, e in enumerate(sys.g.g0)}
        for i, row in enumerate(sys.g.G1):
            for j, e in enumerate(row):
                sec[f"G1_{i + 1}_{j + 1}"] = e.text
        cp["affine"] = sec
    k = sys.kernel
    sec = {"type": k.kind}
    if isinstance(k, LinearKernel):
        for i, row in enumerate(k.entries):
            for j, e in enumerate(row):
                sec[f"K_{i + 1}_{j + 1}"] = e.text
    else:
        for i, e in enumerate(k.components):
            sec[f"G_{i + 1}"] = e.text
        if k.lipschitz is not None:
            sec["L"] = k.lipschitz.text
    if k.envelope is not None:
        sec["M"] = k.envelope.text
    cp["kernel"] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def system_from_text(text):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    try:
        s = cp["system"]
        n, p = int(s["n"]), int(s["p"])
        Delta = float(s["delta"])
        taus = [float(v) for v in s["taus"].split(",")]
        cls = s.get("class", GENERAL)
        name = s.get("name", "custom")
        g = [cp["g"][f"g{i + 1}"] for i in range(n)]
        ell = len(taus) - 1
        g0 = G1 = None
        if cp.has_section("affine"):
            a = cp["affine"]
            g0 = [a[f"g0_{i + 1}"] for i in range(n)]
            G1 = [[a.get(f"G1_{i + 1}_{j + 1}", "0") for j in range(ell * n)] for i in range(n)]
        k = cp["kernel"]
        kind = k.get("type", "linear")
        if kind == "linear":
            kernel = LinearKernel(
                [[k.get(f"K_{i + 1}_{j + 1}", "0") for j in range(n)] for i in range(p)],
                envelope=k.get("M"),
            )
        elif kind == "general":
            kernel = GeneralKernel([k[f"G_{i + 1}"] for i in range(p)], n,
                                   envelope=k.get("M"), lipschitz=k.get("L"))
        else:
            raise ValueError(f"unknown kernel type {kind!r}")
    except KeyError as exc:
        raise ValueError(f"system file is missing {exc}") from None
    return build_system(name, n, p, Delta, taus, g, kernel, cls, g0=g0, G1=G1)


def load_system(spec):
    """`catalog:<name>` or a path to a system file."""
    if spec.startswith("catalog:"):
        return catalog(spec.split(":", 1)[1])
    with open(spec, encoding="utf-8") as fh:
        return system_from_text(fh.read())
