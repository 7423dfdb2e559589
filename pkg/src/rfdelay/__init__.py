"""Numerical tools for functional differential equations with discrete and distributed delays.

Modules: `history` (piecewise polynomial histories and paths), `weakstar`
(a concrete weak-* norm), `system` (right-hand sides and the expression
language), `quadrature`, `solver` (method of steps with Picard collocation),
`reach` (sampled reachability and convergence experiments), `cli`.
"""

from .history import ExtendedPath, InitialCondition, PiecewisePoly, concat, ess_sup_norm, perturb_zero_measure, segment
from .reach import (BallSpec, ConvergenceTable, ReachReport, continuous_equivalence, fc_brs_probe, reach_sup,
                    sample_ic, weakstar_convergence)
from .solver import SolveOutcome, SolverConfig, Status, solve, solve_from
from .system import SystemDef, catalog, load_system
from .weakstar import WeakStarGauge, dist, norm_star, shift_sup_dist

__version__ = "0.1.0"

__all__ = [
    "BallSpec", "ConvergenceTable", "ExtendedPath", "InitialCondition", "PiecewisePoly", "ReachReport",
    "SolveOutcome", "SolverConfig", "Status", "SystemDef", "WeakStarGauge", "catalog", "concat",
    "continuous_equivalence", "dist", "ess_sup_norm", "fc_brs_probe", "load_system", "norm_star",
    "perturb_zero_measure", "reach_sup", "sample_ic", "segment", "shift_sup_dist", "solve", "solve_from",
    "weakstar_convergence",
]
