"""Method-of-steps Picard solver against closed forms and an independent integrator."""

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rfdelay.history import InitialCondition, PiecewisePoly
from rfdelay.solver import SolverConfig, Status, solve, solve_from, with_tolerance
from rfdelay.system import catalog


def const(v=1.0):
    return InitialCondition.constant(v, 1.0)


def step_ic():
    return InitialCondition(1.0, PiecewisePoly.piecewise_constant([-1.0, -0.5, 0.0], [[0.0], [1.0]]))


def test_decay_discrete_closed_form():
    # x' = -x(t-1), x = 1 on [-1, 0]: x = 1 - t on [0, 1], 1 - t + (t-1)^2/2 on [1, 2]
    o = solve(catalog("decay_discrete"), 0.0, const(), 2.0)
    assert o.status == Status.COMPLETED
    assert o.value(1.0)[0] == pytest.approx(0.0, abs=1e-13)
    assert o.value(1.75)[0] == pytest.approx(-0.46875, abs=1e-13)
    assert o.value(2.0)[0] == pytest.approx(-0.5, abs=1e-13)
    t = np.linspace(0.0, 1.0, 17)
    np.testing.assert_allclose(o.trajectory.ae(t)[:, 0], 1.0 - t, atol=1e-13)


def test_step_history_is_followed_exactly():
    o = solve(catalog("decay_discrete"), 0.0, step_ic(), 1.0)
    assert o.value(0.5)[0] == pytest.approx(1.0, abs=1e-14)
    assert o.value(1.0)[0] == pytest.approx(0.5, abs=1e-13)
    assert 0.5 in o.knots


def test_distributed_mean_closed_form():
    # x' = int_{t-1}^t x, x = 1 on [-1, 0]; on [0, 1] x = 1 + sinh(t)
    o = solve(catalog("distributed_mean"), 0.0, const(), 1.0)
    assert o.value(1.0)[0] == pytest.approx(1.0 + math.sinh(1.0), rel=1e-13)
    assert o.value(0.3)[0] == pytest.approx(1.0 + math.sinh(0.3), rel=1e-11)


def test_exponential_growth():
    o = solve(catalog("expgrow"), 0.0, const(), 5.0)
    assert o.value(5.0)[0] == pytest.approx(math.e ** 5, rel=1e-12)


def test_frozen_system_keeps_the_state():
    o = solve(catalog("frozen"), 0.0, const(5.0), 3.0)
    assert o.value(3.0)[0] == 5.0 and o.sup() == 5.0


def test_square_delay_exact_rational_value():
    x2 = Fraction(13, 3)
    x3 = x2 + Fraction(25, 9) + Fraction(10, 9) * Fraction(15, 4) + Fraction(127, 63)
    o = solve(catalog("square_delay"), 0.0, const(), 3.0)
    assert o.value(2.0)[0] == pytest.approx(float(x2), rel=1e-13)
    assert o.value(3.0)[0] == pytest.approx(float(x3), rel=1e-13)


def test_threshold_crossing_of_exponential():
    o = solve(catalog("expgrow"), 0.0, const(), 5.0, SolverConfig(blowup_threshold=10.0))
    assert o.status == Status.BLOWUP
    assert o.escape_estimate == pytest.approx(math.log(10.0), abs=1e-10)


def test_quadratic_blowup_escape_time():
    # x' = x^2 from 2 escapes at 1/2; the threshold is reached at 1/2 - 1e-8
    o = solve(catalog("quadratic_blowup"), 0.0, const(2.0), 1.0)
    assert o.status == Status.BLOWUP
    assert o.escape_estimate == pytest.approx(0.5 - 1e-8, abs=1e-9)
    assert not o.completed and o.T_reached < 0.5


def _reference_affine_mixed(xi0, T):
    """The exp(s) kernel gives nu' = x - nu - x(t-1)/e, leaving a pure discrete-delay
    system integrated interval by interval with DOP853."""
    hist = lambda t: np.array([xi0])  # noqa: E731
    y = np.array([xi0, xi0 * (1.0 - math.exp(-1.0))])
    pieces = []
    for k in range(int(math.ceil(T))):
        prev = hist

        def f(t, z, prev=prev):
            xd = prev(t - 1.0)[0]
            x, nu = z
            return [-x ** 3 + (1.0 + math.tanh(nu)) * xd, x - nu - math.exp(-1.0) * xd]

        sol = solve_ivp(f, (k, min(k + 1.0, T)), y, method="DOP853", rtol=1e-13, atol=1e-13,
                        dense_output=True)
        pieces.append(sol)
        hist = lambda t, s=sol: s.sol(t)[:1]  # noqa: E731
        y = sol.y[:, -1]
    return pieces


def test_affine_mixed_against_independent_integrator():
    ref = _reference_affine_mixed(2.0, 3.0)
    o = solve(catalog("affine_mixed"), 0.0, const(2.0), 3.0)
    assert o.completed
    for k, sol in enumerate(ref):
        t = np.linspace(k, k + 1.0, 11)
        np.testing.assert_allclose(o.trajectory.ae(t)[:, 0], sol.sol(t)[0], atol=1e-9)


def test_contraction_ratio_and_residual_are_reported():
    o = solve(catalog("affine_mixed"), 0.0, const(2.0), 2.0)
    s = o.summary()
    assert 0.0 < s["max_contraction_ratio"] <= 0.5
    assert s["max_residual"] <= 10 * 1e-12 * (1 + 2.0)
    assert s["T_reached"] == 2.0 and s["status"] == "Completed"


def test_runs_are_deterministic():
    a = solve(catalog("affine_mixed"), 0.0, step_ic(), 2.0)
    b = solve(catalog("affine_mixed"), 0.0, step_ic(), 2.0)
    assert a.trajectory == b.trajectory
    assert a.summary() == b.summary()


@pytest.mark.parametrize("t1", [0.7, 1.3])
def test_restart_reproduces_the_continuation(t1):
    sys = catalog("affine_mixed")
    full = solve(sys, 0.0, step_ic(), 3.0)
    part = solve(sys, 0.0, step_ic(), t1 + 0.2)
    rest = solve_from(sys, part, t1, 3.0)
    assert rest.value(3.0)[0] == pytest.approx(full.value(3.0)[0], abs=1e-10)


def test_nonzero_start_time():
    o = solve(catalog("decay_discrete"), 2.0, const(), 4.0)
    assert o.value(4.0)[0] == pytest.approx(-0.5, abs=1e-13)


def test_config_validation():
    for bad in ({"lambda_max": 1.0}, {"picard_tol": 0.0}, {"degree": 9}, {"degree": 0},
                {"max_picard_iters": 0}, {"min_step": -1.0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    cfg = with_tolerance(SolverConfig(), picard_tol=1e-10)
    assert cfg.picard_tol == 1e-10 and cfg.digest() != SolverConfig().digest()
    with pytest.raises(ValueError):
        solve(catalog("frozen"), 1.0, const(), 1.0)


def test_lower_degree_still_converges():
    o = solve(catalog("expgrow"), 0.0, const(), 2.0, SolverConfig(degree=3))
    assert o.value(2.0)[0] == pytest.approx(math.e ** 2, rel=1e-10)


def test_floor_steps_report_unverified_residuals():
    # close to the singularity the residual cannot be met at the floor
    o = solve(catalog("quadratic_blowup"), 0.0, const(2.0), 1.0)
    assert o.summary()["residual_rejections"] > 0
    # a coarse floor leaves accepted-but-unverified steps, then the contraction fails
    coarse = solve(catalog("quadratic_blowup"), 0.0, const(2.0), 1.0,
                   SolverConfig(min_step=1e-3, blowup_threshold=1e12))
    assert coarse.status == Status.PICARD_STALL
    assert coarse.summary()["unverified_steps"] > 0
    assert 0.49 < coarse.T_reached < 0.5
