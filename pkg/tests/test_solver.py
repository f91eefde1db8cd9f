import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sqglab import solver as sv
from sqglab.spectral import GridField, SpectralField, build_eigenbasis, rectangle


@pytest.fixture(scope="module")
def basis():
    return build_eigenbasis(rectangle(), (16, 16))


def unit(basis, j, a=1.0):
    c = np.zeros(basis.n_modes)
    c[j] = a
    return SpectralField(c, basis)


# ---- step

def test_zero_stays_zero(basis):
    cfg = sv.SimConfig(n_modes=(16, 16))
    st_ = sv.step(sv.SimState(unit(basis, 0, 0.0)), cfg, basis)
    assert not st_.theta.coeffs.any() and st_.t == cfg.dt


def test_linear_step_is_exact_decay(basis):
    cfg = sv.SimConfig(dt=0.01, nonlinear=False)
    new = sv.step(sv.SimState(unit(basis, 0)), cfg, basis)
    assert new.theta.coeffs[0] == pytest.approx(math.exp(-0.01 * math.sqrt(basis.mu[0])), rel=1e-15)
    assert np.count_nonzero(new.theta.coeffs) == 1


def test_ground_mode_advection_vanishes(basis):
    # the Riesz velocity of w1 is tangent to its level sets, so u.grad w1 = 0
    # pointwise; independent check by trapezoid quadrature of 1/2 u.grad(theta^2)
    th = unit(basis, 0)
    N, _ = sv.advection(th.coeffs, basis)
    assert abs(N[0]) < 1e-10
    ux, uy = sv.riesz_grid(th.coeffs, basis)
    gx, gy = basis.gradient(th.coeffs)
    w = th.grid()
    assert abs(basis.weight * np.sum(w * (ux * gx + uy * gy))) < 1e-10


def test_cfl_violation_raises(basis):
    cfg = sv.SimConfig(dt=0.5)
    with pytest.raises(sv.CFLError):
        sv.step(sv.SimState(unit(basis, 3, 50.0)), cfg, basis)


def test_config_validation():
    with pytest.raises(ValueError):
        sv.SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        sv.SimConfig(cadence=0)
    with pytest.raises(ValueError):
        sv.AnalysisParams(alpha=0.6)


# ---- energy

def test_energy_residual_zero_for_pure_decay(basis, rng):
    c = rng.standard_normal(basis.n_modes)
    dt = 1e-3
    new = np.exp(-dt * np.sqrt(basis.mu)) * c
    assert abs(sv.energy_residual(c, new, basis.mu, dt)) < 1e-9 * np.dot(c, c) / dt


def test_energy_residual_tends_to_continuum_dissipation(basis, rng):
    # (1 - e^{-2 dt s})/dt -> 2 s as dt -> 0
    c = rng.standard_normal(basis.n_modes)
    s = np.sqrt(basis.mu)
    for dt in (1e-4, 1e-6):
        diss = np.sum(c ** 2 * -np.expm1(-2 * dt * s)) / dt
        assert diss == pytest.approx(2 * np.sum(s * c * c), rel=5 * dt * s.max())


# ---- run

def test_linear_run_rate_matches_sqrt_mu1():
    cfg = sv.SimConfig(n_modes=(8, 8), dt=1e-3, t_end=0.5, nonlinear=False, cadence=50)
    res = sv.run(cfg)
    mu1 = 2 * np.pi ** 2
    assert res.decay_rate == pytest.approx(math.sqrt(mu1), rel=0.01)


def test_zero_initial_data_gives_zero_norms():
    cfg = sv.SimConfig(n_modes=(8, 8), t_end=0.02, initial={"kind": "zero"})
    res = sv.run(cfg)
    for r in res.records:
        assert r.linf == r.l2 == r.half_norm == r.holder == 0.0


@given(st.integers(0, 10_000), st.floats(0.2, 1.5))
def test_max_principle_random_data(seed, amp):
    cfg = sv.SimConfig(n_modes=(16, 16), dt=1e-3, t_end=0.05, cadence=25, seed=seed,
                       initial={"kind": "random", "amplitude": amp})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = sv.run(cfg)
    L = res.linf_steps
    n = L.size - 1
    assert L.max() <= L[0] + 1e-6 * n
    assert np.max(np.diff(L)) <= 1e-6


def test_holder_probe_constraint_and_records():
    cfg = sv.SimConfig(n_modes=(16, 16), dt=1e-3, t_end=0.1, cadence=20,
                       initial={"kind": "random", "amplitude": 0.5}, seed=4)
    res = sv.run(cfg)
    b = sv.solver_basis(cfg)
    hgrid = math.hypot(*b.spacing)
    for r in res.records:
        if r.q_star > 0:
            assert r.h_star <= r.h_bound + hgrid
        assert math.isfinite(r.c1half_integral)
    assert len(res.records) == 6


def test_alpha_guard_warns():
    cfg = sv.SimConfig(n_modes=(8, 8), t_end=0.0, analysis=sv.AnalysisParams(alpha=0.04),
                       initial={"kind": "mode_sum", "modes": {0: 1.0}})
    with pytest.warns(RuntimeWarning, match="smallness"):
        sv.run(cfg)


def test_fit_decay_rate_exact_exponential():
    t = np.linspace(0, 2, 101)
    assert sv.fit_decay_rate(t, 3 * np.exp(-1.7 * t)) == pytest.approx(1.7, rel=1e-12)


def test_initial_field_kinds(basis, tmp_path):
    from sqglab.fields_io import write_fields
    g = sv.initial_field(basis, {"kind": "gaussian_bump", "width": 0.1})
    assert g.grid().max() == pytest.approx(1.0, abs=0.1)
    r = sv.initial_field(basis, {"kind": "random", "amplitude": 0.3}, seed=2)
    assert np.abs(r.grid()).max() == pytest.approx(0.3)
    p = write_fields(tmp_path / "c.bin", {"coeffs": r.coeffs})
    assert np.array_equal(sv.initial_field(basis, {"kind": "file", "path": str(p)}).coeffs, r.coeffs)
    with pytest.raises(ValueError):
        sv.initial_field(basis, {"kind": "nope"})


# ---- Holder seminorm

def brute_holder(values, spacing, sample, offsets, alpha):
    """Exhaustive loop over sample nodes and +-offsets, zero outside the array."""
    hx, hy = spacing
    nx, ny = values.shape
    best = 0.0
    for i in range(nx):
        for j in range(ny):
            if not sample[i, j]:
                continue
            for di, dj in offsets:
                for s in (1, -1):
                    a, b = i + s * di, j + s * dj
                    v = values[a, b] if 0 <= a < nx and 0 <= b < ny else 0.0
                    q = abs(v - values[i, j]) / math.hypot(di * hx, dj * hy) ** alpha
                    best = max(best, q)
    return best


def test_holder_constant_is_zero(basis):
    params = sv.AnalysisParams(h_set=(0.1, 0.2))
    v, probe = sv.holder_seminorm(GridField(np.full(basis.shape, 2.0), basis.spacing), params, basis,
                                  sample=np.pad(np.ones((6, 6), bool), 6))
    assert v == 0.0


def test_holder_linear_ramp_alpha_one(basis):
    X, Y = basis.coords()
    ramp = 0.7 * X
    params = sv.AnalysisParams(alpha=0.9, alpha0=0.95, h_set=(basis.hx,), n_dirs=4)
    sample = np.zeros(basis.shape, bool)
    sample[5:-5, 5:-5] = True
    offs, _ = sv._offsets(basis, params.h_set, params.n_dirs)
    v, _, _ = sv.holder_quotient(ramp, basis.spacing, sample, offs, 1.0)
    assert v == pytest.approx(0.7, rel=1e-12)


@given(st.integers(0, 10_000), st.floats(0.05, 0.9))
def test_holder_matches_brute_force(seed, alpha):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((9, 8))
    sample = rng.random((9, 8)) < 0.6
    sample[4, 4] = True
    offs = np.array([(1, 0), (0, 1), (2, 1), (1, 3), (3, 0)])
    v, _, _ = sv.holder_quotient(vals, (0.1, 0.13), sample, offs, alpha)
    assert v == pytest.approx(brute_holder(vals, (0.1, 0.13), sample, offs, alpha), rel=1e-14)


# ---- linear drift

def test_drift_free_eigenmode(basis):
    cfg = sv.SimConfig(dt=1e-2, t_end=0.3)
    tr = sv.linear_drift_solve(None, None, unit(basis, 1), cfg)
    exact = np.exp(-tr.times * math.sqrt(basis.mu[1]))
    assert np.abs(tr.coeffs[:, 1] - exact).max() < 1e-14


def test_forced_steady_state(basis):
    s = math.sqrt(basis.mu[0])
    f = unit(basis, 0, s).coeffs
    cfg = sv.SimConfig(dt=0.01)
    n = int(math.ceil(20 / s / cfg.dt))
    tr = sv.linear_drift_solve(None, f, unit(basis, 0), cfg, n_steps=n)
    # x' = -s x + s with x(0) = 1 stays at 1
    assert abs(tr.coeffs[-1, 0] - 1.0) < 1e-8
    tr0 = sv.linear_drift_solve(None, f, unit(basis, 0, 0.0), cfg, n_steps=n)
    assert tr0.coeffs[-1, 0] == pytest.approx(1 - math.exp(-s * n * cfg.dt), abs=1e-12)


def test_frozen_drift_transport_bound(basis, rng):
    th = sv.initial_field(basis, {"kind": "random", "amplitude": 0.5}, seed=3)
    b = sv.riesz_grid(th.coeffs, basis)
    v0 = sv.initial_field(basis, {"kind": "random", "amplitude": 1.0}, seed=8)
    cfg = sv.SimConfig(dt=1e-3)
    tr = sv.linear_drift_solve(b, None, v0, cfg, n_steps=100)
    assert tr.linf.max() <= tr.linf[0] + 1e-6 * 100


# ---- Picard

def test_picard_zero_is_fixed_point(basis):
    res = sv.picard_iterate(unit(basis, 0, 0.0), 0.02, 4, sv.SimConfig(dt=1e-3))
    assert res.distances.tolist() == [0.0]


def test_picard_ground_mode_contracts_below_quarter(basis):
    res = sv.picard_iterate(unit(basis, 0, 0.1), 0.05, 4, sv.SimConfig(dt=1e-3))
    # the first iterate is already the fixed point up to round-off
    assert res.distances[0] > 0
    assert np.all(res.distances[1:] <= 1e-14 * res.distances[0])
    assert np.all(res.ratios <= 0.25)


def test_picard_ratio_shrinks_with_T(basis):
    c = np.zeros(basis.n_modes)
    c[[0, 1, 3]] = 0.1, 0.05, 0.03
    th = SpectralField(c, basis)
    a = sv.picard_iterate(th, 0.05, 4, sv.SimConfig(dt=1e-3))
    b = sv.picard_iterate(th, 0.025, 4, sv.SimConfig(dt=1e-3))
    assert a.ratios.max() < 0.25
    assert b.ratios.max() < a.ratios.max()


# ---- boundary traces

def test_spectral_trace_exactly_zero(basis, rng):
    th = SpectralField(rng.standard_normal(basis.n_modes), basis)
    for spec, _ in sv.boundary_trace_check(th, 3):
        assert spec == 0.0


def test_extrapolated_trace_second_order():
    errs = []
    for n in (16, 32, 64):
        b = build_eigenbasis(rectangle(), 1, grid_shape=(n, n))
        errs.append(sv.boundary_trace_check(unit(b, 0), 0)[0][1])
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def test_bracket_trace_vanishes_first_order():
    c = {0: 1.0, 1: 0.5, 2: -0.4, 3: 0.3}
    errs = []
    for n in (32, 64, 128):
        b = build_eigenbasis(rectangle(), (6, 6), grid_shape=(n, n))
        v = np.zeros(b.n_modes)
        for j, a in c.items():
            v[j] = a
        errs.append(sv.poisson_bracket_trace(SpectralField(v, b)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 0.9)
