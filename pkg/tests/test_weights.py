import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpsquare.calibration import WEIGHTED_CEILINGS
from lpsquare.corpus import bump_corpus
from lpsquare.halfspace import HalfSpaceField, SpatialFunction, make_grid
from lpsquare.squarefns import compare_norms, dyadic_radii, maximal_function
from lpsquare.weights import (
    Weight,
    ap_characteristic,
    rh_characteristic,
    weight_preset,
    weighted_compare,
    weighted_identity_gap,
)

GRID = make_grid(1, 16, 256, 1e-3, 4.0, 64)


def brute_balls(grid, vals):
    """Yield the samples inside every grid-centered dyadic ball."""
    for r in dyadic_radii(grid):
        for idx in np.ndindex(*grid.shape):
            x = [grid.axis[i] for i in idx]
            inside = sum(d**2 for d in grid.torus_displacement(x)) < r * r
            yield vals[inside]


def brute_ap(grid, vals, p):
    return max(b.mean() * (b ** (-1 / (p - 1))).mean() ** (p - 1) for b in brute_balls(grid, vals))


def brute_rh(grid, vals, q):
    if math.isinf(q):
        return max(b.max() / b.mean() for b in brute_balls(grid, vals))
    return max((b**q).mean() ** (1 / q) / b.mean() for b in brute_balls(grid, vals))


@pytest.fixture(scope="module")
def corpus():
    return bump_corpus(GRID, 50, 0)


@pytest.mark.parametrize("c", [1.0, 0.3, 7.0])
def test_constant_weights_are_trivial(c):
    g = make_grid(1, 8, 64, 0.1, 1, 2)
    w = Weight(SpatialFunction(g, np.full(g.shape, c)))
    for p in (1, 1.5, 2, 4):
        assert w.ap(p) == pytest.approx(1.0, rel=1e-12)
    for q in (1.5, 3, math.inf):
        assert w.rh(q) == pytest.approx(1.0, rel=1e-12)


def test_power_weight_matches_brute_force_and_refines():
    g = make_grid(1, 8, 64, 0.1, 1, 2)
    w = weight_preset("power(0.5)", g)
    assert w.ap(2) == pytest.approx(brute_ap(g, w.values, 2), rel=1e-12)
    assert w.ap(3) == pytest.approx(brute_ap(g, w.values, 3), rel=1e-12)
    values = [weight_preset("power(0.5)", make_grid(1, 16, nx, 0.1, 1, 2)).ap(2)
              for nx in (256, 512, 1024)]
    assert max(values) / min(values) < 1.2


def test_plateau_rh_matches_brute_force():
    g = make_grid(1, 8, 64, 0.1, 1, 2)
    w = weight_preset("plateau(2)", g)
    for q in (1.5, 2.0, 4.0, math.inf):
        assert w.rh(q) == pytest.approx(brute_rh(g, w.values, q), rel=1e-12)


def test_two_dimensional_characteristics():
    g = make_grid(2, 8, 16, 0.1, 1, 2)
    w = weight_preset("power(0.7)", g)
    assert w.ap(2) == pytest.approx(brute_ap(g, w.values, 2), rel=1e-12)
    assert w.rh(math.inf) == pytest.approx(brute_rh(g, w.values, math.inf), rel=1e-12)


def test_a1_is_the_pointwise_anchor():
    w = weight_preset("power(0.5)", GRID)
    M = maximal_function(w.fn).values
    assert w.ap(1) == np.max(M / w.values)
    assert np.all(M <= w.ap(1) * w.values * (1 + 1e-15))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16), a=st.floats(1.0, 3.0), b=st.floats(1.0, 3.0))
def test_monotonicity(seed, a, b):
    g = make_grid(1, 8, 32, 0.1, 1, 2)
    vals = np.exp(np.random.default_rng(seed).normal(size=g.shape))
    w = Weight(SpatialFunction(g, vals))
    lo, hi = sorted((a, b))
    assert w.ap(hi) <= w.ap(lo) * (1 + 1e-12)
    assert w.rh(1 + lo) <= w.rh(1 + hi) * (1 + 1e-12)
    assert w.rh(1 + hi) <= w.rh(math.inf) * (1 + 1e-12)
    assert w.ap(1 + lo) >= 1 - 1e-12 and w.rh(1 + lo) >= 1 - 1e-12


def test_scale_invariance_to_rounding():
    # exact in real arithmetic; floating point multiplies by 3 with rounding
    for spec in ("power(0.5)", "plateau(3)"):
        w = weight_preset(spec, GRID)
        w3 = w.scaled(3.0)
        for p in (1, 1.5, 2, 4):
            assert abs(w3.ap(p) - w.ap(p)) <= 1e-13 * w.ap(p)
        # powers of two scale without rounding
        w4 = w.scaled(4.0)
        for p in (1, 2):
            assert w4.ap(p) == w.ap(p)


def test_guards():
    g = make_grid(1, 8, 16, 0.1, 1, 2)
    with pytest.raises(ValueError):
        Weight(SpatialFunction(g, np.zeros(g.shape)))
    w = weight_preset("unit", g)
    with pytest.raises(ValueError):
        ap_characteristic(w, 0.5)
    with pytest.raises(ValueError):
        rh_characteristic(w, 1.0)
    for bad in ("power", "plateau(-1)", "plateau(x)", "cubic(2)", "unit(1)"):
        with pytest.raises(ValueError):
            weight_preset(bad, g)


def test_unit_weight_reduces_to_unweighted(corpus):
    w = weight_preset("unit", GRID)
    for F in corpus[:5]:
        for p in (1.0, 4.0):
            a, b = weighted_compare(F, p, w), compare_norms(F, p)
            assert (a.norm_S_w, a.norm_V_w, a.ratio) == (b.norm_S, b.norm_V, b.ratio)


def test_weighted_compare_reports_characteristics(corpus):
    w = weight_preset("power(0.5)", GRID)
    rec = weighted_compare(corpus[0], 4, w)
    assert rec.ap_index == 2 and rec.ap_value == w.ap(2) and rec.relevant == "A"
    rec = weighted_compare(corpus[0], 1, w)
    assert rec.rh_index == 2 and rec.rh_value == w.rh(2) and rec.relevant == "RH"
    rec = weighted_compare(HalfSpaceField(GRID, np.zeros((GRID.nt, GRID.nx))), 1, w)
    assert rec.ratio is None


@pytest.mark.parametrize("name", ["unit", "power(0.5)"])
def test_weighted_ratios_below_frozen_ceilings(name, corpus):
    w = weight_preset(name, GRID)
    a_side = max(weighted_compare(F, 4, w).ratio for F in corpus)
    rh_side = max(1 / weighted_compare(F, 1, w).ratio for F in corpus)
    assert a_side < WEIGHTED_CEILINGS[(name, 4.0)]
    assert rh_side < WEIGHTED_CEILINGS[(name, 1.0)]


def test_weighted_averaging_identity(corpus):
    for spec in ("unit", "power(0.5)", "plateau(2)"):
        w = weight_preset(spec, GRID)
        assert max(weighted_identity_gap(F, w) for F in corpus[:5]) < 1e-12
