"""Piecewise polynomial histories, paths and segments.

Oracles are closed forms (polynomials, exact integrals) or dense sampling.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rfdelay.history import (ExtendedPath, InitialCondition, PiecewisePoly, concat, ess_sup_norm,
                             perturb_zero_measure, segment)

P = PiecewisePoly


def step(lo=0.0, hi=1.0, at=-0.5):
    return P.piecewise_constant([-1.0, at, 0.0], [[lo], [hi]])


def test_constant_and_linear():
    c = P.constant([2.0, -1.0], -1.0, 0.0)
    assert c.dim == 2
    np.testing.assert_array_equal(c.ae(-0.3), [2.0, -1.0])
    ln = P.linear(0.0, 2.0, [0.0], [4.0])
    assert ln.ae(0.5)[0] == pytest.approx(1.0, abs=1e-15)


def test_side_convention_right_limit_except_at_end():
    f = step()
    assert f(-0.5)[0] == 1.0  # right limit at an inner breakpoint
    assert f.left_limit(-0.5)[0] == 0.0
    g = P.piecewise_constant([-1.0, -0.5, 0.0], [[3.0], [7.0]])
    assert g(0.0)[0] == 7.0  # left limit at t_end
    assert g(-1.0)[0] == 3.0


def test_marks_only_seen_pointwise():
    f = step().with_marks([(-0.25, [99.0])])
    assert f(-0.25)[0] == 99.0
    assert f.ae(-0.25)[0] == 1.0
    assert f.ess_sup() == 1.0
    assert f.without_marks() == step()


def test_from_function_reproduces_polynomials():
    poly = lambda t: 1.0 - 2.0 * t + 0.5 * t ** 3  # noqa: E731
    f = P.from_function(poly, [0.0, 0.3, 1.0], 3)
    t = np.linspace(0.0, 1.0, 101)
    np.testing.assert_allclose(f.ae(t)[:, 0], poly(t), rtol=0, atol=1e-14)


def test_degree_cap():
    with pytest.raises(ValueError):
        P([0.0, 1.0], np.zeros((1, 1, 10)))


def test_tiny_pieces_are_merged():
    f = P.piecewise_constant([0.0, 0.5, 0.5 + 1e-16, 1.0], [[1.0], [2.0], [3.0]])
    assert f.n_pieces == 2


def test_invalid_breakpoints():
    with pytest.raises(ValueError):
        P.piecewise_constant([0.0, 0.0, 1.0], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        P.constant(np.nan, 0.0, 1.0)


def test_evaluation_outside_domain():
    with pytest.raises(ValueError):
        step().ae(0.5)


def test_primitive_matches_quadrature():
    f = P.from_function(lambda t: np.cos(3 * t), [0.0, 0.4, 0.9, 2.0], 8)
    want = integrate.quad(lambda t: f.ae(t)[0], 0.0, 1.7, points=[0.4, 0.9])[0]
    assert f.primitive(1.7)[0] == pytest.approx(want, rel=1e-12)
    np.testing.assert_allclose(f.integrate(np.array([0.2]), np.array([1.1]))[0, 0],
                               integrate.quad(lambda t: f.ae(t)[0], 0.2, 1.1, points=[0.4, 0.9])[0],
                               rtol=1e-12)


def test_derivative_of_polynomial():
    f = P.from_function(lambda t: t ** 3, [0.0, 0.5, 1.0], 3)
    d = f.derivative()
    np.testing.assert_allclose(d.ae(np.array([0.1, 0.7]))[:, 0], [0.03, 1.47], atol=1e-13)


def test_arithmetic_on_common_refinement():
    a = step()
    b = P.piecewise_constant([-1.0, -0.25, 0.0], [[1.0], [-1.0]])
    c = a + b
    assert c.n_pieces == 3
    np.testing.assert_array_equal(c.ae(np.array([-0.9, -0.4, -0.1]))[:, 0], [1.0, 2.0, 0.0])
    np.testing.assert_array_equal((a - a).ae(np.array([-0.9, -0.1]))[:, 0], [0.0, 0.0])
    assert (a * 3.0).ae(-0.1)[0] == 3.0


def test_exact_ess_sup_of_interior_extremum():
    # 1 - (t - 0.3)^2 peaks at t = 0.3 inside a single piece
    f = P.from_function(lambda t: 1.0 - (t - 0.3) ** 2, [0.0, 1.0], 2)
    assert f.ess_sup() == pytest.approx(1.0, abs=1e-15)
    assert ess_sup_norm(f) == f.ess_sup()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=9),
       st.integers(1, 4), st.integers(0, 10_000))
def test_ess_sup_brackets_dense_grid(coefs, pieces, seed):
    rng = np.random.default_rng(seed)
    deg = len(coefs) - 1
    bps = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, pieces - 1)), [1.0]])
    bps = np.unique(bps)
    cf = np.array([np.array(coefs) * rng.uniform(0.5, 1.5) for _ in range(bps.size - 1)])[:, None, :]
    f = P(bps, cf)
    grid = np.union1d(np.linspace(0.0, 1.0, 4001), bps)
    lefts = [np.abs(f.left_limit(b)).max() for b in bps[1:]]
    dense = max(np.abs(f.ae(grid)).max(), max(lefts))
    sup = f.ess_sup()
    assert sup >= dense - 1e-12 * max(1.0, dense)
    # second derivative of a degree-d Chebyshev series is bounded by d^4 sum|c|
    h = np.diff(grid).max() / np.diff(bps).min() * 2
    bound = 0.5 * (h ** 2) * deg ** 4 * np.abs(cf).sum(axis=2).max() + 1e-12
    assert sup <= dense + bound


def test_restrict_shift_refine_preserve_values():
    f = P.from_function(np.sin, [0.0, 1.0, 2.0, 3.0], 8)
    r = f.restrict(0.5, 2.5)
    t = np.linspace(0.5, 2.5, 33)
    np.testing.assert_array_equal(r.ae(t), f.ae(t))
    s = f.shift(-3.0)
    np.testing.assert_allclose(s.ae(t - 3.0), f.ae(t), atol=1e-15)
    g = f.refine([0.25, 1.75])
    assert g.n_pieces == 5
    np.testing.assert_array_equal(g.ae(t), f.ae(t))


def test_join_requires_contiguous_parts():
    a = P.constant(1.0, 0.0, 1.0)
    b = P.constant(2.0, 1.0, 2.0)
    j = P.join([a, b])
    assert j.n_pieces == 2 and j.t_end == 2.0
    with pytest.raises(ValueError):
        P.join([a, P.constant(2.0, 1.5, 2.0)])


def test_serialisation_round_trip_is_lossless():
    f = P.from_function(lambda t: np.exp(t) / 3.0, [-1.0, -0.3, 0.0], 7).with_marks([(-0.5, [4.0])])
    g = P.loads(f.dumps())
    assert g == f
    rec = json.loads(f.dumps())
    assert P.from_record(rec) == f


def test_initial_condition_contract():
    ic = InitialCondition(1.0, step())
    assert ic.Delta == 1.0 and ic.dim == 1
    assert not ic.is_continuous()
    assert InitialCondition.constant(2.0).is_continuous()
    with pytest.raises(ValueError):
        InitialCondition([1.0, 2.0], step())
    with pytest.raises(ValueError):
        InitialCondition(1.0, P.constant(1.0, -1.0, 0.5))
    assert InitialCondition.from_record(ic.to_record()).phi == ic.phi


def test_perturb_zero_measure_keeps_function_class():
    ic = InitialCondition(1.0, step())
    p = perturb_zero_measure(ic, [-0.5, -0.2], [[10.0], [-10.0]])
    assert p.phi(-0.2)[0] == -10.0
    assert p.phi.ess_sup() == ic.phi.ess_sup()
    np.testing.assert_array_equal(p.phi.integrate(np.array([-1.0]), np.array([0.0])),
                                  ic.phi.integrate(np.array([-1.0]), np.array([0.0])))
    with pytest.raises(ValueError):
        perturb_zero_measure(ic, [0.0], [[1.0]])
    with pytest.raises(ValueError):
        perturb_zero_measure(ic, [-2.0], [[1.0]])


def test_segment_round_trip_at_t0():
    phi = step()
    x = P.from_function(lambda t: 1.0 + t ** 2, [0.0, 1.0, 2.5], 2)
    path = concat(phi, 0.0, x)
    seg = segment(path, 0.0)
    assert seg.without_marks() == phi
    assert seg(0.0)[0] == x.ae(0.0)[0]


def test_segment_depends_only_on_x_after_delta():
    x = P.from_function(np.cos, np.linspace(0.0, 3.0, 13), 8)
    a = concat(step(), 0.0, x).segment(2.2)
    b = concat(P.constant(-5.0, -1.0, 0.0), 0.0, x).segment(2.2)
    assert a == b
    s = np.linspace(-1.0, 0.0, 11)
    np.testing.assert_allclose(a.ae(s)[:, 0], np.cos(2.2 + s), atol=1e-12)


def test_segment_mixes_history_and_path():
    x = P.from_function(lambda t: 1.0 + t, [0.0, 1.0], 1)
    seg = concat(step(), 0.0, x).segment(0.3)
    np.testing.assert_allclose(seg.ae(np.array([-0.9, -0.65, -0.1]))[:, 0], [0.0, 1.0, 1.2], atol=1e-15)


def test_extended_path_without_x():
    ic = InitialCondition(3.0, step())
    path = ExtendedPath.start(ic, 2.0)
    assert path(2.0)[0] == 3.0
    assert path(1.4)[0] == 0.0
    with pytest.raises(ValueError):
        path(2.1)
