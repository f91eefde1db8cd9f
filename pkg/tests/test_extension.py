import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse.linalg import spsolve

from sqglab import extension as ext
from sqglab import geometry as geo
from sqglab import solver as sv
from sqglab.spectral import SpectralField, build_eigenbasis, disk, rectangle
from sqglab.suites import extension_algebra_defects


@pytest.fixture(scope="module")
def theta(square16):
    return sv.initial_field(square16, {"kind": "random", "n_low": 12}, 3)


# ---- mirror extensions

def test_odd_even_examples():
    f = np.array([[0.0, 1.0, 2.0], [0.0, 3.0, 4.0], [0.0, 5.0, 6.0]])
    assert np.array_equal(ext.odd(f)[0], [-2, -1, 0, 1, 2])
    assert np.array_equal(ext.even(f)[1], [4, 3, 0, 3, 4])


def test_odd_rejects_nonzero_trace():
    f = np.zeros((3, 3))
    f[1, 0] = 1e-3
    with pytest.raises(ext.TraceError):
        ext.odd(f)
    f[1, 0] = 1e-12
    assert ext.odd(f)[1, 2] == 0.0


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([0.05, 0.1, 0.3]))
def test_extension_algebra(seed, h):
    d = extension_algebra_defects(seed, n1=6, n2=5, h=h)
    assert d.pop("trace_rejected") == 1.0
    assert max(d.values()) <= 1e-14 * max(1.0, 1 / h)


def test_half_space_field_parity():
    g = ext.MirrorGrid(0.1, 3, 2)
    f = np.random.default_rng(0).standard_normal((7, 3))
    f[:, 0] = 0
    assert ext.extend(f, "odd", g).parity_defect() == 0.0
    assert ext.extend(f, "even", g).parity_defect() == 0.0
    with pytest.raises(ValueError):
        ext.HalfSpaceField(np.zeros((3, 3)), g)
    with pytest.raises(ValueError):
        ext.extend(f, "none", g)


# ---- cutoffs and covers

def test_cutoff_plateau_support_and_telescoping():
    b = ext.Ball((0.3, 0.4), ext.ball_radii(0.5), "interior")
    X, Y = np.meshgrid(np.linspace(-1, 1.5, 121), np.linspace(-1, 1.5, 121), indexing="ij")
    R = np.hypot(X - 0.3, Y - 0.4)
    for j in range(4):
        c = b.cutoff(j)(X, Y)
        assert np.all(c[R <= b.radii[j]] == 1.0)
        assert np.all(c[R >= b.radii[j + 1]] == 0.0)
        if j < 3:
            assert np.abs(b.cutoff(j + 1)(X, Y) * c - c).max() == 0.0


def test_cutoff_derivatives():
    chi = ext.RadialCutoff((0.0, 0.0), 0.2, 0.6)
    x, y, e = 0.25, 0.17, 1e-5
    c, cx, cy, lap = chi.derivatives(np.array(x), np.array(y))
    assert cx == pytest.approx((chi(x + e, y) - chi(x - e, y)) / (2 * e), rel=1e-6)
    assert cy == pytest.approx((chi(x, y + e) - chi(x, y - e)) / (2 * e), rel=1e-6)
    e = 1e-4
    fd = (chi(x + e, y) + chi(x - e, y) + chi(x, y + e) + chi(x, y - e) - 4 * chi(x, y)) / e ** 2
    assert lap == pytest.approx(fd, rel=1e-4)


def test_cover_properties():
    dom = rectangle(1.0, 0.8)
    cov = ext.build_cover(dom, 0.2, h=0.01)
    X, Y = ext._rect_nodes(dom, 0.01)
    m = cov.multiplicity(X, Y, 0)
    assert m.min() >= 1 and m.max() <= 8
    for b in cov.balls:
        if b.kind == "interior":
            d = float(dom.boundary_distance(np.array(b.center[0]), np.array(b.center[1])))
            assert b.radii[3] < d + 1e-12
        else:
            on_side = min(b.center[0], b.center[1], 1.0 - b.center[0], 0.8 - b.center[1])
            assert abs(on_side) < 1e-12
    assert cov.report["n_corner"] >= 4


def test_cover_errors():
    with pytest.raises(ext.CoverError):
        ext.build_cover(rectangle(), 0.6)
    with pytest.raises(ext.CoverError):
        ext.build_cover(disk(0.5, 0.05), 0.1)
    cov = ext.build_cover(rectangle(), 0.2)
    i = next(k for k, b in enumerate(cov.balls) if b.kind == "corner")
    with pytest.raises(ext.CoverError):
        ext.patch_from_cover(cov, i, 0.02)


# ---- extended operators

def five_point(f, h):
    P = np.pad(f, 1)
    return (4 * f - P[2:, 1:-1] - P[:-2, 1:-1] - P[1:-1, 2:] - P[1:-1, :-2]) / h ** 2


def test_identity_chart_operator_is_grid_laplacian():
    p = ext.make_patch(ext.IdentityChart((0.5, 0.5)), (0.1, 0.3), 0.02, 0.4)
    L, B = ext.extended_operators(p.coeffs)
    f = np.random.default_rng(1).standard_normal(p.grid.shape)
    assert np.abs(ext.apply_L(L, f) - five_point(f, 0.02)).max() < 1e-8
    assert not B(f).any()


def test_flat_chart_operator_symmetric_psd():
    p = ext.make_patch(ext.FlatChart((0.5, 0.0), (0.0, 1.0)), (0.1, 0.3), 0.05, 0.4)
    L, _ = ext.extended_operators(p.coeffs)
    M = L.toarray()
    assert np.abs(M - M.T).max() < 1e-9 * np.abs(M).max()
    assert np.linalg.eigvalsh(M).min() > 0


def test_localize_extend_product_rule(theta):
    p = ext.make_patch(ext.FlatChart((0.5, 0.0), (0.0, 1.0)), (0.1, 0.2, 0.3), 0.02, 0.35)
    full = ext.localize_extend(theta, None, p).values
    assert np.abs(ext.localize_extend(theta, 0, p).values - p.eta(0) * full).max() < 1e-14
    zero = SpectralField(np.zeros_like(theta.coeffs), theta.basis)
    assert not ext.localize_extend(zero, 0, p).values.any()


@pytest.mark.parametrize("chart", [ext.IdentityChart((0.5, 0.5)), ext.FlatChart((0.5, 0.0), (0.0, 1.0))])
def test_laplacian_intertwining_second_order(theta, chart):
    rep = ext.intertwine_order("laplacian", theta, lambda h: ext.make_patch(chart, (0.05, 0.45), h, 0.5),
                               (0.02, 0.01))
    assert rep.order > 1.8


def test_heat_intertwining_vanishes_for_large_time(theta):
    p = ext.make_patch(ext.IdentityChart((0.5, 0.5)), (0.1, 0.3), 0.02, 0.35)
    rep = ext.intertwine_residual("heat", theta, p, times=[0.05, 2.0])
    prof = rep.extra["profile"]
    assert prof[-1]["linf"] < 1e-6 < prof[0]["linf"]


def test_plane_inverse_sqrt_squares_to_inverse():
    p = ext.make_patch(ext.FlatChart((0.5, 0.0), (0.0, 1.0)), (0.1, 0.2), 0.05, 0.5)
    co = ext.ExtendedCoefficients(p.coeffs.a11 * 1.3, p.coeffs.a12, p.coeffs.a22, p.coeffs.a, p.coeffs.h)
    Y1, Y2 = p.grid.mesh()
    f = np.exp(-20 * (Y1 ** 2 + Y2 ** 2))
    twice = ext.plane_inverse_sqrt(co, ext.plane_inverse_sqrt(co, f))
    L, _ = ext.extended_operators(co)
    ref = spsolve(L.tocsc(), f.ravel()).reshape(f.shape)
    assert np.abs(twice - ref).max() < 1e-10 * np.abs(ref).max()


# ---- brackets and the composition rule

def test_bracket_residual_antisymmetric_when_cutoffs_match(theta):
    p = ext.make_patch(ext.IdentityChart((0.5, 0.5)), (0.1, 0.2, 0.3), 0.02, 0.35)
    psi = SpectralField(np.roll(theta.coeffs, 3), theta.basis)
    a = ext.poisson_bracket_check(psi, theta, p, chi1=0, chi=0).field
    b = ext.poisson_bracket_check(theta, psi, p, chi1=0, chi=0).field
    assert np.abs(a + b).max() < 1e-12 * np.abs(a).max() + 1e-12


def test_composition_rule_on_curved_chart():
    g = geo.parabola_graph(0.1, 0.5, 0.1)
    chart = ext.CurvedChart(geo.build_diffeo(g, geo.solve_gamma(g, 0.02)))
    f = ext.graph_test_function(g, 2.0)
    q = ext.graph_test_function(geo.flat_graph(), 3.0)
    errs = [ext.composition_rule_check(f, q, ext.make_patch(chart, (0.05, 0.25), h, 0.3)) for h in (0.02, 0.01)]
    assert errs[1] < errs[0] / 3


# ---- extended system

def test_system_snapshot_zero_and_eta(theta):
    p = ext.make_patch(ext.FlatChart((0.5, 0.0), (0.0, 1.0)), (0.15, 0.3, 0.45), 0.05, 0.5)
    z = SpectralField(np.zeros_like(theta.coeffs), theta.basis)
    s = ext.system_snapshot(z, z, z, 1e-3, p)
    assert s.linf == 0.0 and s.eta_defect == 0.0
    s = ext.system_snapshot(theta, theta, theta, 1e-3, p)
    assert s.eta_defect < 1e-14


def test_remainder_velocity_constant_stable(square16):
    p = ext.make_patch(ext.IdentityChart((0.5, 0.5)), (0.15, 0.3, 0.45), 0.04, 0.5)
    c = ext.remainder_velocity_constant(square16, p, n_fields=6)
    assert np.all(np.isfinite(c)) and c.max() / c.min() < 10


def test_patch_norm_equivalence(theta):
    cov = ext.build_cover(rectangle(), 0.25, h=0.02)
    big = ext.patch_norms(theta, cov, 0.02)
    x = np.linspace(0, 1, 101)
    X, Y = np.meshgrid(x, x, indexing="ij")
    sup = float(np.abs(theta.basis.evaluate(theta.coeffs, X, Y)).max())
    assert 0.9 * sup <= big <= sup * (1 + 1e-12)
