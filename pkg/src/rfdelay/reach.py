"""Sampled reachability suprema and the convergence experiments.

Every report is a lower bound obtained by sampling; verdicts are trend
heuristics with declared thresholds, not certificates.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import export
from .history import InitialCondition, PiecewisePoly, concat
from .solver import SolverConfig, Status, solve
from .weakstar import DEFAULT_J, dist, make_continuous_approximants, make_oscillating, shift_sup_dist

FAMILIES = ("piecewise_constant", "oscillatory", "continuous")
CONVERGENCE_FACTOR = 0.05
NOISE_BAND = 0.10
STABILITY_RTOL = 0.05
ZERO_ERROR = 1e-14
BLOWUP = "BlowUp"


@dataclass(frozen=True)
class BallSpec:
    """Sampling recipe for B_R x B_R in R^n x L-infinity([-Delta, 0]; R^n).

    Sample 0 is always the corner (xi0, phi) = (R 1, R 1); the rest are random.
    """

    R: float
    n: int = 1
    family: str = "piecewise_constant"
    N: int = 100
    seed: int = 0
    Delta: float = 1.0
    max_cells: int = 4
    k_list: tuple = (4, 8, 16, 32, 64)
    degree: int = 3

    def __post_init__(self):
        if self.R < 0 or not np.isfinite(self.R):
            raise ValueError("R must be finite and non-negative")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; known: {', '.join(FAMILIES)}")
        if self.n < 1 or self.N < 1 or self.max_cells < 1 or self.degree < 1:
            raise ValueError("n, N, max_cells and degree must be positive")
        if self.Delta <= 0:
            raise ValueError("Delta must be positive")
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))
        if not self.k_list or min(self.k_list) < 1:
            raise ValueError("k_list needs positive entries")

    def with_N(self, N):
        return BallSpec(self.R, self.n, self.family, N, self.seed, self.Delta,
                        self.max_cells, self.k_list, self.degree)


def sample_ic(ball, index):
    """Deterministic sample `index` of the ball, independent of evaluation order."""
    if not 0 <= index < ball.N:
        raise IndexError("sample index out of range")
    R, n, D = float(ball.R), ball.n, ball.Delta
    if R == 0.0 or index == 0:
        return InitialCondition.constant(np.full(n, R), D)
    rng = np.random.default_rng([ball.seed, index])
    if ball.family == "piecewise_constant":
        cells = int(rng.integers(1, ball.max_cells + 1))
        inner = np.sort(rng.uniform(-D, 0.0, cells - 1))
        vals = rng.uniform(-R, R, (cells, n))
        xi0 = rng.uniform(-R, R, n)
        bps = np.concatenate([[-D], inner, [0.0]])
        if np.any(np.diff(bps) <= 0):
            # coincident draws: fall back to one cell
            bps, vals = np.array([-D, 0.0]), vals[:1]
        return InitialCondition(xi0, PiecewisePoly.piecewise_constant(bps, vals))
    if ball.family == "oscillatory":
        k = ball.k_list[int(rng.integers(len(ball.k_list)))]
        base = rng.uniform(-R / 2, R / 2, n)
        amp = float(rng.uniform(0.0, R / 2))
        xi0 = rng.uniform(-R, R, n)
        phi = make_oscillating(PiecewisePoly.constant(base, -D, 0.0), k, amp)
        return InitialCondition(xi0, phi)
    # continuous: Bernstein polynomial with coefficients in [-R, R] stays in the ball
    deg = ball.degree
    coef = rng.uniform(-R, R, (deg + 1, n))
    binom = np.array([float(comb(deg, j)) for j in range(deg + 1)])

    def f(s):
        u = (np.asarray(s, float) + D) / D
        basis = binom * u[:, None] ** np.arange(deg + 1) * (1 - u[:, None]) ** (deg - np.arange(deg + 1))
        return basis @ coef

    phi = PiecewisePoly.from_function(f, [-D, 0.0], max(deg, 0))
    # the end value of a Bernstein polynomial is its last coefficient
    return InitialCondition(coef[-1], phi)


# ------------------------------------------------------------------- reach
@dataclass
class SampleResult:
    index: int
    sup: float
    status: str
    escape: float = None
    T_reached: float = None
    xi0: tuple = ()

    def row(self):
        return [self.index, self.sup, self.status,
                "" if self.escape is None else self.escape, self.T_reached]


@dataclass
class ReachReport:
    sup_over_all: object
    per_sample: list
    metadata: dict
    witnesses: list = field(default_factory=list)

    @property
    def blowup(self):
        return self.sup_over_all == BLOWUP

    @property
    def failures(self):
        return [s for s in self.per_sample if s.status not in (str(Status.COMPLETED), str(Status.BLOWUP))]

    def to_dict(self):
        return {
            "sup_over_all": self.sup_over_all,
            "metadata": self.metadata,
            "witnesses": [vars(w) | {"xi0": list(w.xi0)} for w in self.witnesses],
            "per_sample": [vars(s) | {"xi0": list(s.xi0)} for s in self.per_sample],
        }

    def to_json(self):
        return export.dumps(self.to_dict())

    def to_csv(self):
        return export.csv_text(["index", "sup", "status", "escape_estimate", "T_reached"],
                               [s.row() for s in self.per_sample])


def _solve_sample(sys, t0, T, ball, cfg, index):
    ic = sample_ic(ball, index)
    out = solve(sys, t0, ic, T, cfg)
    sup = out.sup()
    return SampleResult(index, float(sup), str(out.status), out.escape_estimate,
                        float(out.T_reached), tuple(float(v) for v in ic.xi0))


def reach_sup(sys, t0, T, ball, cfg=None, threads=1, cache=None):
    """Sup over sampled initial conditions of the trajectory sup on [t0, T].

    `cache` maps sample index to an earlier result for the same (sys, t0, T,
    ball seed and family, cfg); indices do not depend on N, so growing N only
    adds new solves.  The reduction is index-ordered, hence deterministic.
    """
    cfg = cfg or SolverConfig()
    if not T > t0:
        raise ValueError("T must exceed t0")
    cache = {} if cache is None else cache
    todo = [i for i in range(ball.N) if i not in cache]
    work = lambda i: _solve_sample(sys, t0, T, ball, cfg, i)  # noqa: E731
    if threads and threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, todo))
    else:
        results = [work(i) for i in todo]
    for r in results:
        cache[r.index] = r
    samples = [cache[i] for i in range(ball.N)]
    witnesses = [s for s in samples if s.status == str(Status.BLOWUP)]
    if witnesses:
        sup_all = BLOWUP
    else:
        sup_all = max(s.sup for s in samples)
    meta = {
        "system": sys.name, "t0": float(t0), "T": float(T), "R": float(ball.R), "N": ball.N,
        "family": ball.family, "seed": ball.seed, "config_digest": cfg.digest(),
        "incomplete": sum(1 for s in samples if s.status not in (str(Status.COMPLETED), str(Status.BLOWUP))),
    }
    return ReachReport(sup_all, samples, meta, witnesses)


# -------------------------------------------------------------- convergence
def verdict(errors, factor=CONVERGENCE_FACTOR, noise=NOISE_BAND, zero=ZERO_ERROR):
    """('converging', None) or ('stalled', gap) for a sequence of sup-errors."""
    e = [float(x) for x in errors]
    if not e or any(not np.isfinite(x) for x in e):
        return "stalled", float("inf")
    if max(e) <= zero:
        return "converging", None
    monotone = all(b <= (1.0 + noise) * a for a, b in zip(e, e[1:]))
    if monotone and e[-1] < factor * e[0]:
        return "converging", None
    return "stalled", e[-1]


@dataclass
class ConvergenceRow:
    k: int
    dist_lo: float
    dist_hi: float
    sup_error: float
    status: str
    shift_dist: float = None


@dataclass
class ConvergenceTable:
    rows: list
    verdict: str
    gap: float = None
    metadata: dict = field(default_factory=dict)

    @property
    def errors(self):
        return [r.sup_error for r in self.rows]

    @property
    def converging(self):
        return self.verdict == "converging"

    def to_dict(self):
        return {"verdict": self.verdict, "gap": self.gap, "metadata": self.metadata,
                "rows": [vars(r) for r in self.rows]}

    def to_json(self):
        return export.dumps(self.to_dict())

    def to_csv(self):
        head = ["k", "dist_lo", "dist_hi", "sup_error", "status", "shift_dist"]
        rows = [[r.k, r.dist_lo, r.dist_hi, r.sup_error, r.status,
                 "" if r.shift_dist is None else r.shift_dist] for r in self.rows]
        return export.csv_text(head, rows)

    def to_long_csv(self):
        """Plot-ready (k, quantity, value) rows."""
        out = []
        for r in self.rows:
            out.append([r.k, "dist_lo", r.dist_lo])
            out.append([r.k, "dist_hi", r.dist_hi])
            out.append([r.k, "sup_error", r.sup_error])
            if r.shift_dist is not None:
                out.append([r.k, "shift_dist", r.shift_dist])
        return export.csv_text(["k", "quantity", "value"], out)


def sup_error(out_k, out_0):
    """sup over the common span of |x^k(t) - x^0(t)| (exact on the pieces)."""
    if not (out_k.completed and out_0.completed):
        return float("inf")
    diff = out_k.trajectory.without_marks() - out_0.trajectory.without_marks()
    return max(diff.ess_sup(), float(np.abs(out_k.ic.xi0 - out_0.ic.xi0).max()))


def _table(sys, t0, T, ic0, ics, ks, J, cfg, factor, noise, shifts):
    base = solve(sys, t0, ic0, T, cfg)
    rows = []
    for k, ic in zip(ks, ics):
        out = base if ic is ic0 else solve(sys, t0, ic, T, cfg)
        d, tail = dist(ic.phi.without_marks(), ic0.phi.without_marks(), J)
        err = sup_error(out, base)
        sd = None
        if shifts and base.completed:
            path_k = concat(ic.phi.without_marks(), t0, base.trajectory.without_marks())
            path_0 = concat(ic0.phi.without_marks(), t0, base.trajectory.without_marks())
            sd = shift_sup_dist(path_k, path_0, T, J)
        rows.append(ConvergenceRow(int(k), d, d + tail, err, str(out.status), sd))
    rows.sort(key=lambda r: r.k)
    v, gap = verdict([r.sup_error for r in rows], factor, noise)
    meta = {"system": sys.name, "t0": float(t0), "T": float(T), "J": J,
            "config_digest": cfg.digest(), "base_status": str(base.status)}
    return ConvergenceTable(rows, v, gap, meta)


def weakstar_convergence(sys, t0, T, phi0, xi0, k_list, J=DEFAULT_J, cfg=None, amplitude=None,
                         R=None, factor=CONVERGENCE_FACTOR, noise=NOISE_BAND, shifts=True):
    """Solutions from phi^k = phi0 + square wave (2k cells) against the solution from phi0.

    The amplitude defaults to R/2 with R = max(|xi0|, ||phi0||) unless given.
    Rows also carry shift_sup_dist of the two histories glued to the base path.
    """
    cfg = cfg or SolverConfig()
    ic0 = InitialCondition(xi0, phi0)
    if amplitude is None:
        if R is None:
            R = max(float(np.abs(ic0.xi0).max()), phi0.ess_sup())
        amplitude = R / 2.0
    ks = sorted(int(k) for k in k_list)
    ics = [InitialCondition(ic0.xi0, make_oscillating(phi0, k, amplitude)) for k in ks]
    tab = _table(sys, t0, T, ic0, ics, ks, J, cfg, factor, noise, shifts)
    tab.metadata.update({"mode": "weakstar", "amplitude": float(amplitude)})
    return tab


def continuous_equivalence(sys, t0, T, ic, k_list, cfg=None, J=DEFAULT_J,
                           factor=CONVERGENCE_FACTOR, noise=NOISE_BAND):
    """Solutions from continuous approximants psi^k against the solution from `ic`."""
    cfg = cfg or SolverConfig()
    ks = sorted(int(k) for k in k_list)
    ics = []
    for k in ks:
        psi = make_continuous_approximants(ic, k)
        ics.append(ic if psi is ic.phi else InitialCondition(ic.xi0, psi))
    tab = _table(sys, t0, T, ic, ics, ks, J, cfg, factor, noise, False)
    tab.metadata["mode"] = "continuous"
    return tab


# ---------------------------------------------------------------- FC / BRS
@dataclass
class BRSReport:
    verdict: str
    entries: list
    witness: SampleResult = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        w = None if self.witness is None else vars(self.witness) | {"xi0": list(self.witness.xi0)}
        return {"verdict": self.verdict, "metadata": self.metadata, "witness": w,
                "entries": [{"N": n, "sup_over_all": s} for n, s in self.entries]}

    def to_json(self):
        return export.dumps(self.to_dict())

    def to_csv(self):
        return export.csv_text(["N", "sup_over_all"], [[n, s] for n, s in self.entries])


def fc_brs_probe(sys, t0, T, R, N_schedule, cfg=None, family="piecewise_constant", seed=0,
                 rtol=STABILITY_RTOL, threads=1, **ball_kw):
    """reach_sup along an increasing N schedule, with solves shared between entries."""
    N_schedule = [int(n) for n in N_schedule]
    if not N_schedule or any(b <= a for a, b in zip(N_schedule, N_schedule[1:])):
        raise ValueError("N_schedule must be increasing")
    cfg = cfg or SolverConfig()
    cache = {}
    entries = []
    report = None
    for N in N_schedule:
        ball = BallSpec(R, family=family, N=N, seed=seed, **ball_kw)
        report = reach_sup(sys, t0, T, ball, cfg, threads=threads, cache=cache)
        entries.append((N, report.sup_over_all))
        if report.blowup:
            break
    meta = {"system": sys.name, "t0": float(t0), "T": float(T), "R": float(R), "family": family,
            "seed": seed, "config_digest": cfg.digest(), "rtol": rtol}
    if report.blowup:
        w = min(report.witnesses, key=lambda s: (s.escape, s.index))
        return BRSReport("blow-up witness found", entries, w, meta)
    sups = [s for _, s in entries]
    if report.failures:
        meta["incomplete"] = len(report.failures)
        return BRSReport("inconclusive: solver failures", entries, None, meta)
    if len(sups) == 1:
        stable = True
    else:
        a, b = sups[-2], sups[-1]
        stable = abs(b - a) <= rtol * max(abs(a), abs(b), np.finfo(float).tiny)
    v = "no blow-up observed and sup stabilized" if stable else "no blow-up observed, sup not stabilized"
    return BRSReport(v, entries, None, meta)
