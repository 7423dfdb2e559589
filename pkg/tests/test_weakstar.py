"""Dyadic probes, the weak-* norm and its shifted-segment supremum."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rfdelay.history import InitialCondition, PiecewisePoly, concat
from rfdelay.weakstar import (WeakStarGauge, dist, make_continuous_approximants, make_oscillating,
                              norm_star, pairing, probe, probe_key, shift_dist_direct,
                              shift_sup_dist)

P = PiecewisePoly


def test_enumeration_is_level_major():
    assert [probe_key(i) for i in range(1, 7)] == [
        (0, 0, 0, 1), (0, 0, 0, -1), (1, 0, 0, 1), (1, 0, 0, -1), (1, 1, 0, 1), (1, 1, 0, -1)]
    assert probe_key(7) == (2, 0, 0, 1)
    # with two components the component varies faster than the cell
    assert [probe_key(i, 2)[1:3] for i in (5, 7, 9)] == [(0, 0), (0, 1), (1, 0)]
    with pytest.raises(ValueError):
        probe_key(0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3000), st.integers(1, 3))
def test_enumeration_is_injective_and_probes_are_normalised(i, n):
    key = probe_key(i, n)
    assert probe_key(i + 1, n) != key
    g = probe(i, n, Delta=2.0) if i < 200 else None
    if g is not None:
        assert g.l1_norm == pytest.approx(1.0, rel=1e-14)
        assert g.key() == key


def test_keys_cover_each_level_exactly_once():
    n = 2
    keys = [probe_key(i, n) for i in range(1, 2 * n * (2 ** 6 - 1) + 1)]
    assert len(set(keys)) == len(keys)
    want = {(lv, c, j, s) for lv in range(6) for c in range(2 ** lv) for j in range(n) for s in (1, -1)}
    assert set(keys) == want


def test_haar_type_pairings_against_quadrature():
    phi = P.from_function(lambda s: s, [-1.0, 0.0], 1)
    assert pairing(probe(1), phi) == pytest.approx(-0.5, abs=1e-15)
    assert pairing(probe(3), phi) == pytest.approx(-0.75, abs=1e-15)
    assert pairing(probe(6), phi) == pytest.approx(0.25, abs=1e-15)
    for i in (7, 12, 20):
        g = probe(i)
        want = integrate.quad(lambda s: g.g.ae(s)[0] * s, -1.0, 0.0, points=list(g.g.breakpoints))[0]
        assert pairing(g, phi) == pytest.approx(want, abs=1e-13)


def test_norm_of_constant_one():
    # levels contribute |<g,1>| = 1 for every probe, so the sum is 1 - 2^-J
    val, tail = norm_star(P.constant(1.0, -1.0, 0.0), J=24)
    assert val == pytest.approx(1.0 - 2.0 ** -24, rel=1e-15)
    assert tail == 2.0 ** -24


def steps():
    cut = st.floats(-0.95, -0.05)
    vals = st.floats(-10, 10, allow_nan=False)
    return st.tuples(cut, vals, vals).map(lambda c: P.piecewise_constant([-1.0, c[0], 0.0], [[c[1]], [c[2]]]))


@settings(max_examples=80, deadline=None)
@given(steps(), steps(), st.floats(-5, 5))
def test_norm_axioms(f, g, a):
    nf, ng = norm_star(f)[0], norm_star(g)[0]
    assert norm_star(f * a)[0] == pytest.approx(abs(a) * nf, rel=1e-12, abs=1e-300)
    assert norm_star(f + g)[0] <= nf + ng + 1e-12
    assert dist(f, g)[0] == pytest.approx(dist(g, f)[0], rel=1e-14, abs=1e-300)
    assert dist(f, f)[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(steps())
def test_truncation_sandwich(f):
    val, tail = norm_star(f, J=12)
    ref = norm_star(f, J=60)[0]
    assert val <= ref + 1e-15
    assert ref <= val + tail + 1e-15


def test_riemann_lebesgue_decay_of_square_waves():
    zero = P.constant(0.0, -1.0, 0.0)
    for k in (1, 3, 16, 100, 1000):
        w = make_oscillating(zero, k, 2.5)
        assert w.ess_sup() == 2.5
        # every dyadic pairing sees at most one uncancelled half-period
        assert norm_star(w)[0] <= 2.5 / k


def test_generators():
    phi0 = P.constant(1.0, -1.0, 0.0)
    w = make_oscillating(phi0, 4, 0.5)
    np.testing.assert_array_equal(w.ae(np.array([-0.99, -0.8, -0.01]))[:, 0], [1.5, 0.5, 0.5])
    assert make_oscillating(phi0, 4, 0.0) is phi0
    ic = InitialCondition(1.0, P.piecewise_constant([-1.0, -0.5, 0.0], [[0.0], [1.0]]))
    for k in (1, 5, 40):
        psi = make_continuous_approximants(ic, k)
        b = psi.breakpoints[1:-1]
        np.testing.assert_allclose([psi.left_limit(x)[0] for x in b], psi.ae(b)[:, 0], atol=1e-13)
        diff = psi - ic.phi
        l1 = integrate.quad(lambda s: abs(diff.ae(s)[0]), -1.0, 0.0, points=list(diff.breakpoints))[0]
        assert l1 == pytest.approx(1.0 / (8 * k), rel=1e-10)
        assert psi(0.0)[0] == 1.0


def _paths(k):
    x = P.from_function(lambda t: np.cos(np.pi * t), np.linspace(0.0, 2.0, 9), 8)
    phi0 = P.constant(1.0, -1.0, 0.0)
    return concat(make_oscillating(phi0, k, 1.0), 0.0, x), concat(phi0, 0.0, x)


def test_shift_sup_agrees_with_direct_segments():
    pk, p0 = _paths(5)
    d = shift_sup_dist(pk, p0, 2.0, detail=True)
    assert d["value"] == pytest.approx(shift_dist_direct(pk, p0, d["argmax_shift"]), rel=1e-12)
    rng = np.random.default_rng(3)
    for q in rng.uniform(0.0, 2.0, 25):
        assert shift_dist_direct(pk, p0, q) <= d["value"] * (1 + 1e-3) + 1e-15
    assert shift_dist_direct(pk, p0, 1.5) == 0.0


def test_shift_sup_requires_shared_future():
    pk, _ = _paths(5)
    other = concat(P.constant(1.0, -1.0, 0.0), 0.0, P.constant(0.0, 0.0, 2.0))
    with pytest.raises(ValueError):
        shift_sup_dist(pk, other, 2.0)


def test_gauge_object():
    gauge = WeakStarGauge(n=1, Delta=1.0, J=8)
    assert len(gauge.probes()) == 8
    f = P.constant(2.0, -1.0, 0.0)
    assert gauge.norm(f) == norm_star(f, 8)
