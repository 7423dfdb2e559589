"""Property checks and acceptance criteria, shared by ``rfdelay verify`` and the tests.

Every check returns a `CheckResult`; none of them raises on failure.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import weakstar
from .history import InitialCondition, PiecewisePoly, concat, perturb_zero_measure
from .quadrature import distributed_eval
from .reach import (BallSpec, continuous_equivalence, fc_brs_probe, reach_sup, sample_ic,
                    weakstar_convergence)
from .solver import SolverConfig, solve, solve_from
from .system import (CATALOG_NAMES, catalog, check_affine, system_from_text,
                     system_to_text, verify_envelopes)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}"

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "seconds": self.seconds,
                "detail": self.detail}


def _run(name, fn, *args):
    start = time.perf_counter()
    try:
        passed, detail = fn(*args)
    except Exception as exc:  # a crashing check is a failing check
        passed, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
    return CheckResult(name, bool(passed), detail, time.perf_counter() - start)


def step_ic(low=0.0, high=1.0, at=-0.5, xi0=None, Delta=1.0):
    phi = PiecewisePoly.piecewise_constant([-Delta, at, 0.0], [[low], [high]])
    return InitialCondition([high if xi0 is None else xi0], phi)


def catalog_experiment(name):
    """Initial condition and horizon used for whole-catalog checks."""
    x0 = 0.3 if name == "quadratic_blowup" else 1.0
    return step_ic(0.5 * x0, x0, -0.4), 2.0


# ------------------------------------------------------------- properties
def prop_enumeration_bijective(n=2, count=2000):
    keys = [weakstar.probe_key(i, n) for i in range(1, count + 1)]
    distinct = len(set(keys)) == len(keys)
    # level-major order: expected key sequence built independently
    expected = []
    level = 0
    while len(expected) < count:
        for cell in range(2 ** level):
            for comp in range(n):
                for sign in (1, -1):
                    expected.append((level, cell, comp, sign))
        level += 1
    ordered = keys == expected[:count]
    return distinct and ordered, {"distinct": distinct, "level_major": ordered,
                                  "scheme": weakstar.ENUMERATION}


def prop_probes_normalised(count=64):
    norms = [weakstar.probe(i, 1, 1.0).l1_norm for i in range(1, count + 1)]
    worst = max(abs(v - 1.0) for v in norms)
    return worst <= 1e-14, {"max_deviation": worst}


def prop_truncation_sandwich():
    rng = np.random.default_rng(7)
    worst = -math.inf
    for _ in range(20):
        vals = rng.uniform(-2, 2, (6, 1))
        bps = np.concatenate([[-1.0], np.sort(rng.uniform(-1, 0, 5)), [0.0]])
        phi = PiecewisePoly.piecewise_constant(bps, vals)
        for J1, J2 in ((4, 9), (10, 24)):
            a, tail = weakstar.norm_star(phi, J1)
            b, _ = weakstar.norm_star(phi, J2)
            worst = max(worst, a - b, b - (a + tail))
    return worst <= 1e-15, {"max_violation": worst}


def prop_riemann_lebesgue(max_index=64):
    worst = 0.0
    zero = PiecewisePoly.constant(0.0, -1.0, 0.0)
    for k in (2, 3, 5, 8, 16, 31, 64, 128, 256):
        wave = weakstar.make_oscillating(zero, k, 1.0)
        for i in range(1, max_index + 1):
            p = weakstar.probe(i, 1, 1.0)
            C = max(4.0, 0.5 * p.sup_norm)
            worst = max(worst, abs(weakstar.pairing(p, wave)) * k / C)
    return worst <= 1.0 + 1e-12, {"max_ratio_to_bound": worst}


def prop_segment_round_trip():
    phi = step_ic().phi
    x = PiecewisePoly.from_function(lambda t: np.cos(t), [0.0, 0.5, 2.0], 6)
    path = concat(phi.with_endpoints(-1.0, 0.0), 0.0, x)
    seg = path.segment(0.0)
    same = seg.without_marks() == phi and np.array_equal(seg(0.0), x.ae(0.0))
    late = path.segment(1.5)
    other = concat(PiecewisePoly.constant(9.0, -1.0, 0.0), 0.0, x).segment(1.5)
    return same and late == other, {"round_trip": same, "history_forgotten": late == other}


def prop_zero_measure_quadrature():
    ic = step_ic()
    pert = perturb_zero_measure(ic, [-0.5, -0.25, -1e-12], [[40.0], [-3.0], [5.0]])
    sys = catalog("affine_mixed")
    same_q = np.array_equal(distributed_eval(sys.kernel, 0.3, ic.phi),
                            distributed_eval(sys.kernel, 0.3, pert.phi))
    same_sup = ic.phi.ess_sup() == pert.phi.ess_sup()
    same_pair = all(weakstar.pairing(weakstar.probe(i), ic.phi) == weakstar.pairing(weakstar.probe(i), pert.phi)
                    for i in range(1, 25))
    return same_q and same_sup and same_pair, {"quadrature": same_q, "ess_sup": same_sup,
                                               "pairings": same_pair}


def prop_catalog_classes():
    detail = {}
    ok = True
    for name in CATALOG_NAMES:
        sys = catalog(name)
        affine = check_affine(sys)
        want = name != "square_delay"
        text = system_to_text(sys)
        text_ok = system_to_text(system_from_text(text)) == text
        env = verify_envelopes(sys, 2.0, 2.0)
        env_ok = bool(env["magnitude"] and env["lipschitz"])
        detail[name] = {"class": sys.cls, "affine_identity": affine, "text_round_trip": text_ok,
                        "envelopes": env}
        ok &= (affine == want) and text_ok and env_ok
    return ok, detail


def prop_smoothing():
    sys = catalog("decay_discrete")
    out = solve(sys, 0.0, step_ic(), 3.0)
    traj = out.trajectory.without_marks()
    d = traj.derivative()
    jumps0, jumps1 = 0.0, 0.0
    for b in traj.breakpoints[1:-1]:
        jumps0 = max(jumps0, float(np.abs(traj.left_limit(b) - traj.ae(b)).max()))
        if b > 1.0 + 1e-12:
            jumps1 = max(jumps1, float(np.abs(d.left_limit(b) - d.ae(b)).max()))
    ok = jumps0 <= 1e-12 and jumps1 <= 1e-9
    return ok, {"max_value_jump": jumps0, "max_derivative_jump_after_tau1": jumps1}


def prop_contraction_certificate():
    cfg = SolverConfig()
    worst = 0.0
    for name in CATALOG_NAMES:
        ic, T = catalog_experiment(name)
        out = solve(catalog(name), 0.0, ic, T, cfg)
        worst = max(worst, out.diagnostics["max_ratio"])
    return worst <= cfg.lambda_max + cfg.contraction_slack, {"max_ratio": worst}


def prop_reach_determinism():
    sys = catalog("decay_discrete")
    ball = BallSpec(1.0, N=12, seed=3)
    a = reach_sup(sys, 0.0, 1.5, ball)
    b = reach_sup(sys, 0.0, 1.5, ball, threads=3)
    same = a.to_json() == b.to_json()
    ic1, ic2 = sample_ic(ball, 5), sample_ic(ball, 5)
    same_ic = ic1.phi == ic2.phi and np.array_equal(ic1.xi0, ic2.xi0)
    small = reach_sup(sys, 0.0, 1.5, BallSpec(0.5, N=12, seed=3)).sup_over_all
    mono = small <= a.sup_over_all
    return same and same_ic and mono, {"identical_reports": same, "ic_deterministic": same_ic,
                                       "monotone_in_R": mono}


PROPERTIES = {
    "enumeration-bijectivity": prop_enumeration_bijective,
    "probe-normalisation": prop_probes_normalised,
    "truncation-sandwich": prop_truncation_sandwich,
    "riemann-lebesgue": prop_riemann_lebesgue,
    "segment-round-trip": prop_segment_round_trip,
    "zero-measure-quadrature": prop_zero_measure_quadrature,
    "catalog-classes": prop_catalog_classes,
    "discontinuity-smoothing": prop_smoothing,
    "contraction-certificate": prop_contraction_certificate,
    "reach-determinism": prop_reach_determinism,
}


# ------------------------------------------------------------- acceptance
def _timed_solve(sys, ic, T, cfg):
    start = time.perf_counter()
    out = solve(sys, 0.0, ic, T, cfg)
    return out, time.perf_counter() - start


def criterion_1(cfg):
    sys = catalog("decay_discrete")
    out, secs = _timed_solve(sys, InitialCondition.constant(1.0), 2.0, cfg)
    e1 = abs(out.value(1.0)[0] - 0.0)
    e2 = abs(out.value(2.0)[0] + 0.5)
    return e1 <= 1e-10 and e2 <= 1e-10 and secs < 1.0, {"err_x1": e1, "err_x2": e2, "seconds": secs}


def criterion_2(cfg):
    sys = catalog("distributed_mean")
    out, secs = _timed_solve(sys, InitialCondition.constant(1.0), 1.0, cfg)
    err = abs(out.value(1.0)[0] - (1.0 + math.sinh(1.0)))
    return err <= 1e-8 and secs < 2.0, {"err_x1": err, "seconds": secs}


def criterion_3(cfg):
    detail = {}
    ok = True
    for name in CATALOG_NAMES:
        sys = catalog(name)
        ic, T = catalog_experiment(name)
        pert = perturb_zero_measure(ic, [-0.4, -0.7, -1e-9], [[50.0], [-3.0], [7.0]])
        a, b = solve(sys, 0.0, ic, T, cfg), solve(sys, 0.0, pert, T, cfg)
        same = (np.array_equal(a.knots, b.knots) and np.array_equal(a.knot_values, b.knot_values)
                and np.array_equal(a.trajectory.coeffs, b.trajectory.coeffs)
                and a.status == b.status)
        detail[name] = same
        ok &= same
    return ok, detail


def criterion_4(cfg, restarts=(0.7, 1.0, 1.3)):
    """Overlap discrepancy of restarts, on the solver's own scale tol (1 + |x|)."""
    detail = {}
    ok = True
    for name in CATALOG_NAMES:
        sys = catalog(name)
        ic, T = catalog_experiment(name)
        base = solve(sys, 0.0, ic, T, cfg)
        worst = 0.0
        for t1 in restarts:
            r = solve_from(sys, base, t1, T, cfg)
            u = np.unique(np.concatenate([np.linspace(t1, T, 1001), r.knots, base.knots[base.knots >= t1]]))
            a, b = r.trajectory.ae(u), base.trajectory.ae(u)
            scaled = np.abs(a - b).max(axis=1) / (cfg.picard_tol * (1.0 + np.abs(b).max(axis=1)))
            worst = max(worst, float(scaled.max()))
        detail[name] = worst
        ok &= worst <= 10.0 and base.completed
    return ok, {"max_discrepancy_in_tol_units": detail}


def criterion_5(cfg, k_list=(4, 8, 16, 32, 64), J=weakstar.DEFAULT_J, T=2.0):
    phi0 = PiecewisePoly.constant(1.0, -1.0, 0.0)
    x = PiecewisePoly.from_function(lambda t: np.cos(np.pi * t), [0.0, 0.5, 1.0, 1.5, 2.0], 8)
    rows = []
    for k in k_list:
        phik = weakstar.make_oscillating(phi0, k, 1.0)
        d = weakstar.shift_sup_dist(concat(phik, 0.0, x), concat(phi0, 0.0, x), T, J, detail=True)
        rows.append(d)
    vals = [r["value"] for r in rows]
    mono = all(b <= 1.1 * a for a, b in zip(vals, vals[1:]))
    tail = rows[-1]["tail_bound"]
    final_ok = vals[-1] <= 2.0 * tail
    return mono and final_ok, {"values": vals, "monotone": mono, "final": vals[-1],
                               "tail": tail, "final_within_2_tail": final_ok}


def criterion_6(cfg, k_list=(4, 8, 16, 32, 64)):
    start = time.perf_counter()
    tab = weakstar_convergence(catalog("affine_mixed"), 0.0, 5.0, PiecewisePoly.constant(1.0, -1.0, 0.0),
                               [1.0], k_list, cfg=cfg, R=2.0, shifts=False)
    secs = time.perf_counter() - start
    e = tab.errors
    ratio = e[-1] / e[0] if e[0] > 0 else math.inf
    ok = tab.converging and ratio <= 0.05 and secs < 30.0
    return ok, {"errors": e, "ratio_last_first": ratio, "verdict": tab.verdict, "seconds": secs}


def criterion_7(cfg, k_list=(4, 8, 16, 32, 64)):
    tab = weakstar_convergence(catalog("square_delay"), 0.0, 1.0, PiecewisePoly.constant(0.0, -1.0, 0.0),
                               [0.0], k_list, cfg=cfg, amplitude=1.0, shifts=False)
    ok = tab.verdict == "stalled" and tab.gap is not None and 0.9 <= tab.gap <= 1.1
    return ok, {"errors": tab.errors, "verdict": tab.verdict, "gap": tab.gap}


def criterion_8(cfg, k_list=(4, 8, 16, 32, 64, 128, 256), T=2.0):
    detail = {}
    ok = True
    for name in ("decay_discrete", "distributed_mean"):
        tab = continuous_equivalence(catalog(name), 0.0, T, step_ic(), k_list, cfg)
        fine = tab.converging and tab.errors[-1] <= 1e-3
        detail[name] = {"errors": tab.errors, "verdict": tab.verdict}
        ok &= fine
    return ok, detail


def criterion_9(cfg, N_schedule=(100, 200, 400)):
    am = fc_brs_probe(catalog("affine_mixed"), 0.0, 5.0, 2.0, N_schedule, cfg)
    sups = [s for _, s in am.entries]
    stable = am.verdict == "no blow-up observed and sup stabilized"
    qb = fc_brs_probe(catalog("quadratic_blowup"), 0.0, 1.0, 2.0, N_schedule, cfg)
    w = qb.witness
    escape_ok = False
    rel = None
    if w is not None and w.escape is not None:
        want = 1.0 / w.xi0[0]
        rel = abs(w.escape - want) / want
        escape_ok = rel <= 0.1
    return stable and escape_ok, {
        "affine_mixed_sups": sups, "affine_mixed_verdict": am.verdict,
        "control_verdict": qb.verdict, "witness_xi0": None if w is None else w.xi0[0],
        "witness_escape": None if w is None else w.escape, "escape_rel_error": rel,
    }


def criterion_10(cfg):
    finer = replace(cfg, picard_tol=cfg.picard_tol / 2, degree=min(cfg.degree + 2, 8))
    detail = {}
    ok = True
    for name in CATALOG_NAMES:
        sys = catalog(name)
        ic, T = catalog_experiment(name)
        a, b = solve(sys, 0.0, ic, T, cfg), solve(sys, 0.0, ic, T, finer)
        d = float(np.abs(a.value(T) - b.value(T)).max()) if a.completed and b.completed else math.inf
        detail[name] = d
        ok &= d <= 100.0 * cfg.picard_tol
    return ok, {"change_in_x_T": detail, "finer_degree": finer.degree}


CRITERIA = {
    "1-method-of-steps-oracle": criterion_1,
    "2-distributed-oracle": criterion_2,
    "3-zero-measure-insensitivity": criterion_3,
    "4-semigroup-restart": criterion_4,
    "5-uniform-over-shifts": criterion_5,
    "6-oscillatory-convergence": criterion_6,
    "7-square-delay-stalls": criterion_7,
    "8-continuous-approximants": criterion_8,
    "9-empirical-brs": criterion_9,
    "10-parameter-insensitivity": criterion_10,
}


def run_properties(names=None):
    names = list(PROPERTIES) if names is None else names
    return [_run(n, PROPERTIES[n]) for n in names]


def run_criteria(cfg=None, names=None):
    cfg = cfg or SolverConfig()
    names = list(CRITERIA) if names is None else names
    return [_run(n, CRITERIA[n], cfg) for n in names]


def inject_fault(kind):
    """Corrupt a component in place (for checking that verification notices).

    Returns a function that undoes the corruption.
    """
    if kind != "probe-enumeration":
        raise ValueError(f"unknown fault {kind!r}")
    original = weakstar.probe_key

    def broken(i, n=1):
        # indices 3 and 4 collapse onto the same probe
        return original(3 if i == 4 else i, n)

    weakstar.probe_key = broken
    weakstar._probe_edges.cache_clear()

    def undo():
        weakstar.probe_key = original
        weakstar._probe_edges.cache_clear()

    return undo

