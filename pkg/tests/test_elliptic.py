import io
import math

import numpy as np
import pytest

from lpsquare.corpus import bump_function
from lpsquare.elliptic import (
    PRESETS,
    assemble,
    build_field,
    caccioppoli_check,
    converse_pairing,
    converse_pairings,
    discrete_symbol,
    energy_gap,
    heat,
    heat_batch,
    heat_many,
    laguerre_rule,
    load_coefficients,
    offdiag_decay,
    parse_descriptor,
    poisson,
    poisson_many,
    preset,
    write_coefficients,
)
from lpsquare.halfspace import make_grid

SPACE = make_grid(1, 16, 256, 1e-3, 64.0, 64)


def mode(grid, k):
    return np.cos(2 * np.pi * k * grid.coords[0] / grid.ell)


@pytest.fixture(scope="module")
def ops():
    return {name: preset(name, SPACE) for name in PRESETS}


def test_identity_spectrum_matches_symbol():
    g = make_grid(1, 16, 64, 0.1, 1, 2)
    w = np.sort(np.linalg.eigvalsh(preset("identity", g).matrix.toarray()))
    expected = np.sort([discrete_symbol(g, k) for k in range(-32, 32)])
    np.testing.assert_allclose(w, expected, atol=1e-10)


def test_identity_spectrum_two_dimensions():
    g = make_grid(2, 8, 16, 0.1, 1, 2)
    w = np.sort(np.linalg.eigvalsh(preset("identity", g).matrix.toarray()))
    expected = np.sort([discrete_symbol(g, (a, b)) for a in range(16) for b in range(16)])
    np.testing.assert_allclose(w, expected, atol=1e-10)


def test_smooth_scalar_structure(ops):
    L = ops["smooth-scalar"]
    assert abs(L.row_sums()).max() < 1e-10
    M = L.matrix.toarray()
    np.testing.assert_array_equal(M, M.T)
    assert np.linalg.eigvalsh(M).min() > -1e-10


def test_anisotropic_two_dimensional_operator():
    g = make_grid(2, 8, 16, 0.1, 1, 2)
    A = np.zeros((2, 2) + g.shape)
    A[0, 0], A[1, 1], A[0, 1], A[1, 0] = 2.0, 1.0, 0.5, 0.5
    L = assemble(A, 0.5, 2.5, g)
    assert L.hermitian
    assert abs(L.row_sums()).max() < 1e-10
    assert abs(np.asarray(L.matrix.sum(axis=0))).max() < 1e-10


@pytest.mark.parametrize("bad", [
    dict(A=0.5, lam=1.0, Lam=2.0),
    dict(A=3.0, lam=1.0, Lam=2.0),
    dict(A=1.0, lam=0.0, Lam=2.0),
    dict(A=1.0, lam=2.0, Lam=1.0),
])
def test_ellipticity_guard(bad):
    g = make_grid(1, 8, 16, 0.1, 1, 2)
    a = np.ones(g.shape)
    a[5] = bad["A"]
    with pytest.raises(ValueError):
        assemble(a, bad["lam"], bad["Lam"], g)


def test_ellipticity_uses_the_real_part():
    g = make_grid(2, 8, 8, 0.1, 1, 2)
    # skew part has no effect on Re A xi.xi but enlarges |A|
    A = np.zeros((2, 2) + g.shape)
    A[0, 0] = A[1, 1] = 1.0
    A[0, 1], A[1, 0] = 0.9, -0.9
    with pytest.raises(ValueError):
        assemble(A, 1.0, 1.2, g)
    assert assemble(A, 1.0, 1.4, g).norm_inf == pytest.approx(math.sqrt(1 + 0.81))


def test_complex_operator_is_accretive_and_not_normal(ops):
    L = ops["complex-perturbed"]
    assert not L.hermitian and not L.normal and not L.uses_eig
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = rng.normal(size=SPACE.shape) + 1j * rng.normal(size=SPACE.shape)
        assert np.vdot(u, L.apply(u)).real >= 0


def test_heat_fourier_oracle():
    L = preset("identity", SPACE)
    f = mode(SPACE, 3)
    mu = discrete_symbol(SPACE, 3)
    times = [1e-3, 0.1, 1.0, 7.5]
    u = heat_many(L, f, times)
    for got, t in zip(u, times):
        assert abs(got - math.exp(-t * mu) * f).max() < 1e-6


def test_heat_crank_nicolson_low_mode():
    L = preset("identity", SPACE)
    f = mode(SPACE, 2)
    mu = discrete_symbol(SPACE, 2)
    u = heat_many(L, f, [0.05, 0.5, 3.0], method="cn")
    for got, t in zip(u, [0.05, 0.5, 3.0]):
        assert abs(got - math.exp(-t * mu) * f).max() < 1e-6


@pytest.mark.parametrize("name", PRESETS)
def test_heat_constants_and_contraction(name, ops):
    L = ops[name]
    ones = heat_many(L, np.ones(SPACE.shape), [0.01, 1.0, 10.0])
    np.testing.assert_allclose(ones, 1.0, atol=1e-10)
    f = bump_function(SPACE, np.random.default_rng(4)).values
    u = heat_many(L, f, [0.01, 0.3, 3.0])
    nf = np.linalg.norm(f)
    assert all(np.linalg.norm(v) <= nf * (1 + 1e-8) for v in u)


def test_heat_semigroup_law():
    f = bump_function(SPACE, np.random.default_rng(2)).values
    L = preset("smooth-scalar", SPACE)
    twice = heat(L, heat(L, f, 0.3), 0.7).values
    np.testing.assert_allclose(twice, heat(L, f, 1.0).values, atol=1e-6)
    Lc = preset("complex-perturbed", SPACE)
    assert Lc.default_method == "expm"
    twice = heat(Lc, heat(Lc, f, 0.3), 0.7).values
    assert abs(twice - heat(Lc, f, 1.0).values).max() < 1e-10
    # different Crank-Nicolson step sequences agree to second order
    twice = heat(Lc, heat(Lc, f, 0.3, "cn"), 0.7, "cn").values
    assert abs(twice - heat(Lc, f, 1.0, "cn").values).max() < 1e-5


def test_dense_exponential_path():
    f = bump_function(SPACE, np.random.default_rng(8)).values
    times = [0.02, 0.4, 3.0]
    L = preset("identity", SPACE)
    np.testing.assert_allclose(heat_many(L, f, times, "expm"), heat_many(L, f, times, "eig"),
                               atol=1e-12)
    Lc = preset("complex-perturbed", SPACE)
    assert abs(heat_many(Lc, f, times, "expm") - heat_many(Lc, f, times, "cn")).max() < 1e-5
    big = preset("complex-perturbed", make_grid(1, 16, 2048, 0.1, 1, 2))
    assert big.default_method == "cn"


def test_real_in_real_out(ops):
    f = bump_function(SPACE, np.random.default_rng(3)).values
    for name in ("identity", "smooth-scalar", "checkerboard"):
        assert np.isrealobj(heat_many(ops[name], f, [0.5]))
        assert np.isrealobj(poisson_many(ops[name], f, [0.5]))
    assert np.iscomplexobj(heat_many(ops["complex-perturbed"], f, [0.5]))


def test_heat_rejects_bad_times(ops):
    with pytest.raises(ValueError):
        heat(ops["identity"], np.ones(SPACE.shape), 0.0)
    with pytest.raises(ValueError):
        poisson(ops["identity"], np.ones(SPACE.shape), -1.0)


def test_laguerre_normalization():
    s, w, C = laguerre_rule(32)
    assert C == pytest.approx(1 / math.sqrt(math.pi), rel=1e-13)
    with pytest.raises(ValueError):
        laguerre_rule(8)


def test_poisson_constants(ops):
    for name in ("identity", "checkerboard"):
        np.testing.assert_allclose(poisson(ops[name], np.ones(SPACE.shape), 0.7).values, 1.0,
                                   atol=1e-12)


def test_poisson_fourier_oracle_resolved_regime():
    # the 32-node rule resolves e^{-sqrt(a)} to 1e-3 once a = t^2 mu >= 2
    L = preset("identity", SPACE)
    for k in (2, 5, 9):
        mu = discrete_symbol(SPACE, k)
        f = mode(SPACE, k)
        for t in (math.sqrt(2 / mu), 2.0, 5.0):
            got = poisson(L, f, t).values
            assert abs(got - math.exp(-t * math.sqrt(mu)) * f).max() < 1e-3


def test_poisson_quadrature_error_profile():
    # below t^2 mu ~ 2 the error reaches about 0.05 at 32 nodes
    L = preset("identity", SPACE)
    f = mode(SPACE, 1)
    mu = discrete_symbol(SPACE, 1)
    t = math.sqrt(0.01 / mu)
    err = abs(poisson(L, f, t).values - math.exp(-t * math.sqrt(mu)) * f).max()
    assert 0.04 < err < 0.06


def test_poisson_semigroup_law_resolved_regime():
    L = preset("identity", SPACE)
    f = mode(SPACE, 6)
    twice = poisson(L, poisson(L, f, 1.5), 2.0).values
    assert abs(twice - poisson(L, f, 3.5).values).max() < 1e-3


def test_poisson_crank_nicolson_matches_eig():
    g = make_grid(1, 16, 64, 0.5, 2.0, 4)
    L = preset("identity", g)
    f = bump_function(g, np.random.default_rng(0)).values
    a = poisson_many(L, f, g.t, method="eig")
    b = poisson_many(L, f, g.t, method="cn")
    assert abs(a - b).max() < 1e-5


def test_grad_heat_fourier_oracle():
    g = make_grid(1, 16, 256, 0.01, 4.0, 16)
    L = preset("identity", g)
    k = 3
    F = build_field(L, mode(g, k), "grad_heat", g).field
    assert F.channels == 1
    x = g.coords[0]
    theta = 2 * np.pi * k / g.ell
    deriv = -np.sin(theta * x) * math.sin(theta * g.h) / g.h
    mu = discrete_symbol(g, k)
    expected = np.exp(-g.t * mu)[:, None] * deriv[None]
    np.testing.assert_allclose(F.values[:, 0], expected, atol=1e-10)
    # the discrete derivative approaches the continuum one
    assert abs(math.sin(theta * g.h) / g.h - theta) / theta < 1e-3


def test_heat_scalar_fourier_oracle():
    g = make_grid(1, 16, 256, 0.01, 4.0, 16)
    L = preset("identity", g)
    f = mode(g, 2)
    mu = discrete_symbol(g, 2)
    F = build_field(L, f, "m_heat_scalar(1)", g).field
    a = g.t**2 * mu
    np.testing.assert_allclose(F.values[:, 0], (a * np.exp(-a))[:, None] * f[None], atol=1e-10)


@pytest.mark.parametrize("desc", ["grad_heat", "grad_poisson_full", "m_poisson_full(1)",
                                  "m_heat_full(0)", "m_heat_full(2)"])
def test_constants_give_zero_gradients(desc):
    g = make_grid(1, 16, 64, 0.1, 4.0, 8)
    F = build_field(preset("smooth-scalar", g), np.full(g.shape, 2.0), desc, g).field
    assert abs(F.values).max() < 1e-10


def test_m_zero_poisson_field_is_the_poisson_gradient():
    g = make_grid(1, 16, 128, 0.05, 4.0, 16)
    L = preset("checkerboard", g)
    f = bump_function(g, np.random.default_rng(1)).values
    a = build_field(L, f, "grad_poisson_full", g).field.values
    b = build_field(L, f, "m_poisson_full(0)", g).field.values
    np.testing.assert_array_equal(a, b)


def test_descriptor_parsing():
    assert parse_descriptor("m_heat_full(3)") == ("m_heat_full", 3)
    assert parse_descriptor("grad_heat") == ("grad_heat", 0)
    for bad in ("grad_wave", "m_heat_full", "grad_heat(1)", "m_heat_scalar(-1)"):
        with pytest.raises(ValueError):
            parse_descriptor(bad)


def test_channel_counts():
    g = make_grid(2, 8, 16, 0.1, 1.0, 4)
    L = preset("identity", g)
    f = bump_function(g, np.random.default_rng(0)).values
    assert build_field(L, f, "grad_heat", g).field.channels == 2
    assert build_field(L, f, "m_heat_full(1)", g).field.channels == 3
    assert build_field(L, f, "m_heat_scalar(1)", g).field.channels == 1


def test_offdiag_heat_kernel_exponent():
    g = make_grid(1, 32, 512, 0.1, 1.0, 2)
    x = g.coords[0]
    E = (x >= -1) & (x < 0)
    F = (x >= 4) & (x < 5)
    d = 4.0
    rec = offdiag_decay(preset("identity", g), E, F, d * d / np.geomspace(4, 64, 12))
    assert rec.distance == pytest.approx(4.0625)
    assert rec.slope == pytest.approx(-0.25, rel=0.2)
    assert max(rec.amplitudes) <= 1 + 1e-8


def test_offdiag_large_time_and_errors():
    g = make_grid(1, 16, 128, 0.1, 1.0, 2)
    x = g.coords[0]
    E = (x >= -1) & (x < 0)
    F = (x >= 2) & (x < 3)
    L = preset("identity", g)
    amps = offdiag_decay(L, E, F, [0.1, 1.0, 10.0, 100.0]).amplitudes
    assert amps[0] < amps[1] < amps[2]
    assert all(a <= 1 + 1e-8 for a in amps)
    with pytest.raises(ValueError):
        offdiag_decay(L, E, E | F, [1.0])
    single = offdiag_decay(L, E, F, [1.0])
    assert single.slope is None


def test_decomposition_record_shapes():
    g = make_grid(1, 16, 128, 0.02, 4.0, 32)
    L = preset("identity", g)
    recs = caccioppoli_check(L, np.full(g.shape, 1.5), 1, [[0.0]], g)
    assert recs[0].ratio is None and recs[0].lhs == 0
    f = bump_function(g, np.random.default_rng(5)).values
    rec = caccioppoli_check(L, f, 0, [[0.0], [1.0]], g)
    assert all(r.term1 == 0 and r.ratio is not None and 0 < r.ratio < 10 for r in rec)
    with pytest.raises(ValueError):
        caccioppoli_check(L, f, 2, [[0.0]], g)


def test_energy_identity_and_sandwich():
    g = make_grid(1, 16, 256, 1e-3, 64.0, 64)
    f = bump_function(g, np.random.default_rng(6)).values
    gap = energy_gap(preset("identity", g), f, g)
    assert gap["Gh2"] == pytest.approx(gap["half_f2"], rel=0.01)
    for name in ("smooth-scalar", "checkerboard"):
        e = energy_gap(preset(name, g), f, g)
        assert e["lower"] <= e["half_f2"] * 1.02
        assert e["half_f2"] <= e["upper"] * 1.02


def test_converse_pairing_holds():
    g = make_grid(1, 16, 256, 1e-3, 64.0, 64)
    rng = np.random.default_rng(9)
    f, h = bump_function(g, rng).values, bump_function(g, rng).values
    for name in ("identity", "checkerboard"):
        rec = converse_pairing(preset(name, g), f, h, g)
        assert rec.slack > 0
        assert rec.bound == pytest.approx((rec.norm_A + 1) * rec.GhL_f * rec.GhD_g)
    # f = g with L = -Lap is the equality case; discretization leaves it within 1%
    same = converse_pairing(preset("identity", g), f, f, g)
    assert abs(same.slack) < 0.01


def test_coefficient_container_round_trip():
    g = make_grid(2, 8, 8, 0.1, 1.0, 2)
    L = preset("checkerboard", g)
    buf = io.BytesIO()
    write_coefficients(buf, L)
    buf.seek(0)
    back = load_coefficients(buf, L.lam, L.Lam)
    assert (abs(back.matrix - L.matrix)).max() == 0
    c = preset("complex-perturbed", make_grid(1, 8, 16, 0.1, 1.0, 2))
    buf = io.BytesIO()
    write_coefficients(buf, c)
    buf.seek(0)
    assert (abs(load_coefficients(buf, c.lam, c.Lam).matrix - c.matrix)).max() == 0


def test_batched_heat_matches_single_runs():
    g = make_grid(1, 16, 64, 0.05, 2.0, 6)
    rng = np.random.default_rng(12)
    fs = np.stack([bump_function(g, rng).values for _ in range(3)])
    for name in ("checkerboard", "complex-perturbed"):
        L = preset(name, g)
        batch = heat_batch(L, fs, g.t)
        for f, b in zip(fs, batch):
            np.testing.assert_allclose(b, heat_many(L, f, g.t), rtol=0, atol=1e-13)
        got = converse_pairings(L, fs, fs[::-1], g)
        for f, h, rec in zip(fs, fs[::-1], got):
            assert rec == converse_pairing(L, f, h, g)
