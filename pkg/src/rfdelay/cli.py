"""Command-line front end.

    rfdelay simulate --system catalog:decay_discrete --T 2 --ic const:1
    rfdelay reach    --system catalog:affine_mixed --T 5 --R 2 --N 200
    rfdelay converge --system catalog:square_delay --T 1 --ic const:0 --mode weakstar --amplitude 1 --expect-stalled
    rfdelay verify

Exit codes: 0 success, 2 usage error, 3 blow-up, 4 solver failure,
5 stalled convergence (inverted by --expect-stalled), 1 failed verification.
"""

import argparse
import configparser
import json
import os
import sys

import numpy as np

from . import checks, export
from .expr import ExprError
from .history import InitialCondition, PiecewisePoly
from .reach import FAMILIES, BallSpec, continuous_equivalence, reach_sup, weakstar_convergence
from .solver import SolverConfig, Status, solve
from .system import load_system

EXIT_OK, EXIT_FAILED_CHECKS, EXIT_USAGE, EXIT_BLOWUP, EXIT_SOLVER, EXIT_STALLED = 0, 1, 2, 3, 4, 5
OUT_DIR_ENV = "RFDELAY_OUT_DIR"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ inputs
def parse_ic(spec, sysdef):
    """'const:C[,C...]', 'step:L,R[,XI]' (jump at -Delta/2) or a JSON file."""
    n, D = sysdef.n, sysdef.Delta
    try:
        if spec.startswith("const:"):
            vals = [float(v) for v in spec[6:].split(",")]
            if len(vals) not in (1, n):
                raise UsageError(f"const IC needs 1 or {n} values")
            return InitialCondition.constant(np.broadcast_to(np.array(vals), (n,)).copy(), D)
        if spec.startswith("step:"):
            vals = [float(v) for v in spec[5:].split(",")]
            if len(vals) not in (2, 3):
                raise UsageError("step IC is step:LEFT,RIGHT[,XI0]")
            lo, hi = vals[0], vals[1]
            xi = vals[2] if len(vals) == 3 else hi
            phi = PiecewisePoly.piecewise_constant([-D, -D / 2, 0.0], [[lo] * n, [hi] * n])
            return InitialCondition([xi] * n, phi)
        with open(spec, encoding="utf-8") as fh:
            ic = InitialCondition.from_record(json.load(fh))
    except UsageError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"bad initial condition {spec!r}: {exc}") from exc
    if ic.dim != n or abs(ic.Delta - D) > 1e-12 * D:
        raise UsageError("initial condition does not match the system dimension or Delta")
    return ic


def _int_list(text):
    try:
        out = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from exc
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("need positive integers")
    return out


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return v
    return conv


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# ------------------------------------------------------------------ parser
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, needs_ic=True):
    p.add_argument("--config", help="INI file whose [common] and [<command>] sections supply defaults")
    p.add_argument("--system", default=None, help="system file or catalog:NAME")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--T", type=float, default=None, help="final time")
    if needs_ic:
        p.add_argument("--ic", default="const:1", help="const:C, step:L,R[,XI] or a JSON file")
    p.add_argument("--tol", type=_positive(float), default=1e-12, help="Picard tolerance")
    p.add_argument("--degree", type=int, default=6, help="collocation degree (1..8)")
    p.add_argument("--blowup", type=_positive(float), default=1e8, help="blow-up threshold B")
    p.add_argument("--out-dir", default=None, help=f"output directory (default ${OUT_DIR_ENV} or .)")
    p.add_argument("--out", default=None, help="file name stem for outputs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive(int), default=1, help="advisory worker count")


def build_parser():
    parser = _Parser(prog="rfdelay", description="Solve and probe functional differential equations with delays.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="integrate one initial condition")
    _common(p)
    p.add_argument("--dense", type=int, default=0, help="extra uniform samples per step in the CSV")

    p = sub.add_parser("reach", help="sampled reachability supremum over a ball")
    _common(p, needs_ic=False)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--N", type=_positive(int), default=100)
    p.add_argument("--family", choices=FAMILIES, default="piecewise_constant")
    p.add_argument("--max-cells", type=_positive(int), default=4)
    p.add_argument("--k-list", type=_int_list, default=[4, 8, 16, 32, 64])
    p.add_argument("--poly-degree", type=_positive(int), default=3)

    p = sub.add_parser("converge", help="convergence table for oscillatory or continuous approximants")
    _common(p)
    p.add_argument("--mode", choices=("weakstar", "continuous"), default="weakstar")
    p.add_argument("--k-list", type=_int_list, default=[4, 8, 16, 32, 64])
    p.add_argument("--J", type=_positive(int), default=24)
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--R", type=float, default=None, help="ball radius; amplitude defaults to R/2")
    p.add_argument("--expect-stalled", type=_bool, nargs="?", const=True, default=False)

    p = sub.add_parser("verify", help="run property checks and acceptance criteria")
    p.add_argument("--config", help="INI file with a [verify] section")
    p.add_argument("--tol", type=_positive(float), default=1e-12)
    p.add_argument("--only", default=None, help="comma-separated check names")
    p.add_argument("--skip", default=None, help="comma-separated check names to leave out")
    p.add_argument("--inject-fault", choices=("probe-enumeration",), default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--out", default=None)
    return parser, sub


def _apply_config(parser, sub, argv):
    """Load --config values as defaults of the chosen subcommand (flags still win)."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or known.command not in sub.choices:
        return
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are flag names and case matters (T, t0)
    try:
        with open(known.config, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {known.config!r}: {exc}") from exc
    sp = sub.choices[known.command]
    dests = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    values = {}
    for section in ("common", known.command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in dests:
                raise UsageError(f"unknown key {key!r} in [{section}] of {known.config}")
            act = dests[dest]
            try:
                values[dest] = act.type(raw) if act.type is not None else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"bad value for {key!r} in {known.config}: {exc}") from exc
            if act.choices is not None and values[dest] not in act.choices:
                raise UsageError(f"bad value for {key!r} in {known.config}: {raw!r}")
    sp.set_defaults(**values)


def _solver_config(args):
    try:
        return SolverConfig(picard_tol=args.tol, degree=args.degree, blowup_threshold=args.blowup)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(args):
    if args.system is None:
        raise UsageError("--system is required")
    if args.T is None:
        raise UsageError("--T is required")
    if not args.T > args.t0:
        raise UsageError("--T must exceed --t0")
    try:
        sysdef = load_system(args.system)
    except (OSError, KeyError, ValueError, ExprError, configparser.Error) as exc:
        raise UsageError(f"cannot load system {args.system!r}: {exc}") from exc
    return sysdef


def _out_dir(args):
    return args.out_dir or os.environ.get(OUT_DIR_ENV) or "."


def _write(args, files):
    """Create the output directory and write all files (only after validation)."""
    d = _out_dir(args)
    os.makedirs(d, exist_ok=True)
    for name, text in files.items():
        export.write_text(os.path.join(d, name), text)


def _status_code(status):
    if status == Status.COMPLETED:
        return EXIT_OK
    if status == Status.BLOWUP:
        return EXIT_BLOWUP
    return EXIT_SOLVER


# ---------------------------------------------------------------- commands
def trajectory_rows(out, dense=0):
    rows = []
    knots, vals = out.knots, out.knot_values
    for i, t in enumerate(knots):
        rows.append([float(t)] + [float(v) for v in vals[i]])
        if dense and i + 1 < knots.size:
            for u in np.linspace(t, knots[i + 1], dense + 2)[1:-1]:
                rows.append([float(u)] + [float(v) for v in out.trajectory.ae(u)])
    return rows


def cmd_simulate(args):
    sysdef = _load(args)
    ic = parse_ic(args.ic, sysdef)
    cfg = _solver_config(args)
    if args.dense < 0:
        raise UsageError("--dense must be non-negative")
    out = solve(sysdef, args.t0, ic, args.T, cfg)
    stem = args.out or "simulate"
    head = ["t"] + [f"x{j + 1}" for j in range(sysdef.n)]
    summary = out.summary()
    summary.update({"system": sysdef.name, "config_digest": cfg.digest(), "ic": args.ic,
                    "lipschitz": out.diagnostics.get("lipschitz", {})})
    _write(args, {f"{stem}.trajectory.csv": export.csv_text(head, trajectory_rows(out, args.dense)),
                  f"{stem}.diagnostics.json": export.dumps(summary)})
    print(f"{out.status}: t = {export.fmt(out.T_reached)}, x = "
          + ", ".join(export.fmt(v) for v in out.knot_values[-1])
          + ("" if out.escape_estimate is None else f", escape ~ {export.fmt(out.escape_estimate)}"))
    return _status_code(out.status)


def cmd_reach(args):
    sysdef = _load(args)
    cfg = _solver_config(args)
    try:
        ball = BallSpec(args.R, n=sysdef.n, family=args.family, N=args.N, seed=args.seed,
                        Delta=sysdef.Delta, max_cells=args.max_cells, k_list=tuple(args.k_list),
                        degree=args.poly_degree)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rep = reach_sup(sysdef, args.t0, args.T, ball, cfg, threads=args.threads)
    stem = args.out or "reach"
    _write(args, {f"{stem}.csv": rep.to_csv(), f"{stem}.json": rep.to_json()})
    sup = rep.sup_over_all
    print(f"sup over {ball.N} samples: {sup if isinstance(sup, str) else export.fmt(sup)}")
    if rep.blowup:
        return EXIT_BLOWUP
    return EXIT_SOLVER if rep.failures else EXIT_OK


def cmd_converge(args):
    sysdef = _load(args)
    ic = parse_ic(args.ic, sysdef)
    cfg = _solver_config(args)
    if args.mode == "weakstar":
        tab = weakstar_convergence(sysdef, args.t0, args.T, ic.phi, ic.xi0, args.k_list, args.J, cfg,
                                   amplitude=args.amplitude, R=args.R)
    else:
        tab = continuous_equivalence(sysdef, args.t0, args.T, ic, args.k_list, cfg, J=args.J)
    stem = args.out or f"converge_{args.mode}"
    _write(args, {f"{stem}.csv": tab.to_csv(), f"{stem}.long.csv": tab.to_long_csv(),
                  f"{stem}.json": tab.to_json()})
    gap = "" if tab.gap is None else f", gap = {export.fmt(tab.gap)}"
    print(f"{tab.verdict}{gap}")
    if any(r.status == str(Status.BLOWUP) for r in tab.rows) or tab.metadata["base_status"] == str(Status.BLOWUP):
        return EXIT_BLOWUP
    if any(r.status != str(Status.COMPLETED) for r in tab.rows):
        return EXIT_SOLVER
    stalled = tab.verdict == "stalled"
    if args.expect_stalled:
        return EXIT_OK if stalled else EXIT_STALLED
    return EXIT_STALLED if stalled else EXIT_OK


def _names(text, known):
    if text is None:
        return None
    names = [v.strip() for v in text.split(",") if v.strip()]
    bad = [n for n in names if n not in known]
    if bad:
        raise UsageError(f"unknown checks: {', '.join(bad)}; known: {', '.join(known)}")
    return names


def cmd_verify(args):
    known = list(checks.PROPERTIES) + list(checks.CRITERIA)
    only = _names(args.only, known)
    skip = set(_names(args.skip, known) or [])
    selected = [n for n in (only or known) if n not in skip]
    try:
        cfg = SolverConfig(picard_tol=args.tol)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    undo = checks.inject_fault(args.inject_fault) if args.inject_fault else None
    try:
        props = checks.run_properties([n for n in selected if n in checks.PROPERTIES])
        crits = checks.run_criteria(cfg, [n for n in selected if n in checks.CRITERIA])
    finally:
        if undo is not None:
            undo()
    results = props + crits
    for r in results:
        print(r.line())
    passed = all(r.passed for r in results)
    report = {"passed": passed, "picard_tol": cfg.picard_tol, "fault": args.inject_fault,
              "checks": [r.to_dict() for r in results]}
    _write(args, {f"{args.out or 'verify'}.json": export.dumps(_plain(report))})
    return EXIT_OK if passed else EXIT_FAILED_CHECKS


def _plain(obj):
    """Plain Python values, without wall-clock timings (files must be reproducible)."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items() if k != "seconds"}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


COMMANDS = {"simulate": cmd_simulate, "reach": cmd_reach, "converge": cmd_converge, "verify": cmd_verify}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, sub = build_parser()
    try:
        _apply_config(parser, sub, argv)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rfdelay: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
