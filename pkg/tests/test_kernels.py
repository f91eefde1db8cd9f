import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.special import gamma as gamma_fn

from sqglab import kernels as kl
from sqglab.geometry import sigma

spd = st.tuples(st.floats(0.5, 2.0), st.floats(-0.3, 0.3), st.floats(0.5, 2.0)).map(
    lambda t: np.array([[t[0], t[1]], [t[1], t[2]]]))


# ---- Gaussian and Poisson kernels

def test_gaussian_at_origin():
    for t in (0.1, 1.0, 3.0):
        assert kl.gaussian_kernel(np.eye(2), np.zeros(2), t) == pytest.approx(1 / (4 * math.pi * t), rel=1e-15)


@given(spd, st.floats(0.05, 2.0))
def test_kernel_masses(A, t):
    assert abs(kl.kernel_mass("gaussian", A, t) - 1) < 1e-10
    assert abs(kl.kernel_mass("half", A, t) - 1) < 1e-8


def test_gaussian_semigroup_by_convolution():
    A = np.array([[1.5, 0.2], [0.2, 0.8]])
    for z, t, s in (((0.3, 0.1), 0.2, 0.1), ((1.0, -0.5), 0.5, 0.3)):
        assert kl.gaussian_semigroup_defect(A, z, t, s) < 1e-8


def test_half_kernel_constant():
    assert kl.half_kernel_constant() == pytest.approx(1 / (2 * math.pi), abs=1e-12)
    # independent radial quadrature: 2 pi int_0^inf r (1+r^2)^{-3/2} dr = 2 pi
    val = integrate.quad(lambda r: r * (1 + r * r) ** -1.5, 0, np.inf)[0]
    assert 2 * math.pi * val == pytest.approx(2 * math.pi, rel=1e-12)


@given(spd, st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.05, 2.0))
def test_subordination_identity(A, x1, x2, t):
    assert kl.subordination_defect(A, (x1, x2), t) < 1e-8


def test_c_tilde0():
    closed = gamma_fn(1.5) / (math.pi * gamma_fn(0.5))
    assert closed == pytest.approx(1 / (2 * math.pi), abs=1e-15)
    assert kl.C_TILDE0 == pytest.approx(1 / (2 * math.pi), abs=1e-15)
    assert abs(kl.c_tilde0_by_quadrature() - 1 / (2 * math.pi)) < 1e-8


def test_half_kernel_gradient_matches_differences():
    A = np.array([[1.2, 0.3], [0.3, 0.9]])
    x = np.array([0.4, -0.2])
    g = kl.half_kernel_gradient(A, x, 0.3)
    e = 1e-6
    for k in range(2):
        d = np.zeros(2)
        d[k] = e
        fd = (kl.half_kernel(A, x + d, 0.3) - kl.half_kernel(A, x - d, 0.3)) / (2 * e)
        assert g[k] == pytest.approx(fd, rel=1e-7)


def test_kernel_input_validation():
    with pytest.raises(ValueError):
        kl.gaussian_kernel(np.array([[1, 0.5], [0.4, 1]]), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        kl.half_kernel(-np.eye(2), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        kl.gaussian_kernel(np.eye(2), np.zeros(2), 0.0)


# ---- constant-coefficient square root

def wave(k, A=None, h=1 / 16, half_width=6.0):
    X, Y = kl.plane_grid(h, half_width)
    u = kl.window(X, Y, 3.0, 2.5) * np.cos(k[0] * X + k[1] * Y)
    return X, Y, u


@pytest.mark.parametrize("k", [(2 * math.pi, 0.0), (2 * math.pi, 2 * math.pi)])
def test_sqrt_const_symbol_on_plane_waves(k):
    h = 1 / 16
    X, Y, u = wave(k, h=h)
    out = kl.sqrt_const(np.eye(2), u, h)
    sel = np.hypot(X, Y) <= 0.5
    sym = math.hypot(*k)
    assert np.abs(out - sym * u)[sel].max() / (sym * np.abs(u).max()) < 1e-3


def test_sqrt_const_anisotropic_symbol():
    A = np.array([[1.4, 0.3], [0.3, 0.7]])
    k = np.array([2 * math.pi, math.pi])
    h = 1 / 16
    X, Y, u = wave(k, h=h)
    out = kl.sqrt_const(A, u, h)
    sym = math.sqrt(k @ A @ k)
    sel = np.hypot(X, Y) <= 0.5
    assert np.abs(out - sym * u)[sel].max() / (sym * np.abs(u).max()) < 2e-3


def test_sqrt_const_of_plateau_is_tail_integral():
    # u = w(|x|) radial, 1 near 0: L^{1/2}u(0) = c~0 int (1 - w)/|z|^3 dz = int_0^inf (1 - w(r)) r^-2 dr
    R, W = 1.5, 1.0
    h = 1 / 32
    X, Y = kl.plane_grid(h, 4.0)
    u = kl.window(X, Y, R, W)
    out = kl.sqrt_const(np.eye(2), u, h)
    c = tuple(s // 2 for s in u.shape)
    tail = integrate.quad(lambda r: (1 - float(sigma((R - r) / W))) / r ** 2, R - W, R, epsabs=1e-13)[0] \
        + integrate.quad(lambda r: r ** -2, R, np.inf)[0]
    assert out[c] == pytest.approx(tail, rel=1e-4)


def test_sqrt_variable_identity_matches_const(rng):
    h = 1 / 12
    X, Y = kl.plane_grid(h, 2.5)
    u = kl.random_window_field(rng, X, Y, n_modes=8, kmax=3.0, radius=1.2, width=0.8)
    co = kl.CoefficientField.constant(np.eye(2), u.shape, h)
    a = kl.sqrt_variable(co, u)[0]
    b = kl.sqrt_const(np.eye(2), u, h)
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-4
    z = kl.sqrt_variable(co, np.zeros_like(u))
    assert not z[0].any() and not z[1].any()


def test_frozen_correction_bound_constant_stable(rng):
    h = 1 / 10
    X, Y = kl.plane_grid(h, 2.0)
    a11 = 1 + 0.2 * np.exp(-(X ** 2 + Y ** 2))
    co = kl.CoefficientField(a11, 0.1 * np.sin(X) * np.exp(-Y ** 2), 1.0 + 0 * X, h)
    Cs = []
    for _ in range(3):
        u = kl.random_window_field(rng, X, Y, n_modes=8, kmax=3.0, radius=1.0, width=0.6)
        J = kl.frozen_correction(co, u)
        B = kl.frozen_difference_bound(u, h)
        m = B > 1e-3 * B.max()
        Cs.append(np.max(np.abs(J[m]) / B[m]))
    assert max(Cs) / min(Cs) < 3


# ---- flux operator

def test_identity_flux_is_five_point_laplacian():
    n, h = 7, 0.1
    one = np.ones((n, n))
    L = kl.flux_operator(one, 0 * one, one, h).toarray()
    T = (np.diag(2 * np.ones(n)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / h ** 2
    ref = np.kron(T, np.eye(n)) + np.kron(np.eye(n), T)
    assert np.abs(L - ref).max() < 1e-10


@given(st.integers(0, 10_000))
def test_flux_symmetric_psd(seed):
    r = np.random.default_rng(seed)
    n = 9
    a11 = 1 + 0.5 * r.random((n, n))
    a22 = 1 + 0.5 * r.random((n, n))
    a12 = 0.4 * (r.random((n, n)) - 0.5)
    L = kl.flux_operator(a11, a12, a22, 0.1)
    f, g = r.standard_normal(n * n), r.standard_normal(n * n)
    assert abs(f @ (L @ g) - g @ (L @ f)) <= 1e-12 * np.abs(L @ g).sum() * np.abs(f).max()
    assert f @ (L @ f) >= 0


def test_flux_symbol_on_periodic_wave():
    n, h = 16, 0.25
    A = np.array([[1.3, 0.2], [0.2, 0.9]])
    L = kl.flux_operator(np.full((n, n), 1.3), np.full((n, n), 0.2), np.full((n, n), 0.9), h, periodic=True)
    x = np.arange(n) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    kx, ky = 2 * math.pi * 2 / (n * h), 2 * math.pi * 3 / (n * h)
    u = np.exp(1j * (kx * X + ky * Y))
    Lu = (L @ u.real.ravel()) + 1j * (L @ u.imag.ravel())
    assert np.abs(Lu - kl.flux_symbol(A, kx, ky, h) * u.ravel()).max() < 1e-10


def test_coefficient_field_validation():
    with pytest.raises(ValueError):
        kl.CoefficientField(np.ones((3, 3)), 2 * np.ones((3, 3)), np.ones((3, 3)), 0.1)


# ---- D-functional

def test_d_functional_constant_is_zero():
    f = np.full((21, 21), 3.0)
    # zero outside the array is part of the model, so look at the interior of a plateau
    X, Y = kl.plane_grid(0.1, 3.0)
    f = kl.window(X, Y, 2.0, 0.5) * 3.0
    D = kl.d_functional(f, 0.1).values
    c = tuple(s // 2 for s in f.shape)
    tail = 2 * math.pi * 9.0 * integrate.quad(lambda r: (1 - float(sigma((2.0 - r) / 0.5))) ** 2 / r ** 2,
                                              1.5, 2.0)[0] + 2 * math.pi * 9.0 / 2.0
    assert D[c] == pytest.approx(tail, rel=1e-3)


def test_d_functional_far_field():
    s = 0.15
    h = 1 / 40
    X, Y = kl.plane_grid(h, 1.5)
    f = np.exp(-(X ** 2 + Y ** 2) / (2 * s * s))
    D = kl.d_functional(f, h).values
    i, j = int(round(1.2 / h)) + f.shape[0] // 2, f.shape[1] // 2
    x0 = np.array([X[i, j], Y[i, j]])
    g = lambda r, p: math.exp(-r * r / (s * s)) * r / (np.hypot(x0[0] - r * math.cos(p), x0[1] - r * math.sin(p)) ** 3)
    ref = integrate.dblquad(lambda r, p: g(r, p), 0, 2 * math.pi, 0, 1.0, epsabs=1e-14, epsrel=1e-10)[0]
    # the field is truncated at the box edge; the truncated mass is ~e^{-100}
    assert D[i, j] == pytest.approx(ref, rel=1e-6)


def test_d_functional_scaling(rng):
    # D(f(2 .))(x) = 2 D(f)(2x): the same samples on a grid of half the spacing
    X, Y = kl.plane_grid(0.05, 1.5)
    f = kl.random_window_field(rng, X, Y, n_modes=6, kmax=4.0)
    a = kl.d_functional(f, 0.05).values
    b = kl.d_functional(f, 0.025).values
    assert np.abs(b - 2 * a).max() <= 1e-10 * np.abs(a).max()


def test_d_functional_identity_with_square_root(rng):
    # v L^{1/2} v - 1/2 L^{1/2}(v^2) = (c~0/2) D(v) for A = I
    h = 1 / 40
    X, Y = kl.plane_grid(h, 1.5)
    inner = np.hypot(X, Y) < 1.0
    for _ in range(20):
        v = kl.random_window_field(rng, X, Y)
        lhs = v * kl.sqrt_const(np.eye(2), v, h) - 0.5 * kl.sqrt_const(np.eye(2), v * v, h)
        D = kl.d_functional(v, h).values
        err = np.abs(lhs - 0.5 * kl.C_TILDE0 * D)[inner].max()
        assert err <= 1e-3 * np.abs(lhs).max()


# ---- certificates

def test_certificate_families():
    c = kl.lower_bound_certificate("finite_diff_z16", 5, seed=1)
    assert c.min_ratio > 0 and c.ratios.size == 5 * 3 * 2
    z = kl.lower_bound_certificate("pointwise_z1", 5, seed=1)
    assert z.config["min_value"] >= -1e-8
    with pytest.raises(ValueError):
        kl.lower_bound_certificate("nope", 2)


# ---- frozen Duhamel

def gauss_box(N=64, P=4.0):
    h = P / N
    x = (np.arange(N) - N // 2) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.exp(-(X ** 2 + Y ** 2) / (2 * 0.3 ** 2)), h


def test_duhamel_zero_data():
    v0, h = gauss_box()
    co = kl.CoefficientField.constant(np.eye(2), v0.shape, h)
    r = kl.frozen_duhamel_solve(None, co, None, 0 * v0, 0.1, n_t=2)
    assert r.iterations == 1 and not r.values.any()


def test_duhamel_matches_fourier_and_shift():
    v0, h = gauss_box(128)
    co = kl.CoefficientField.constant(np.eye(2), v0.shape, h)
    r = kl.frozen_duhamel_solve(None, co, None, v0, 0.1, n_t=2)
    assert np.abs(r.values[-1] - kl.fourier_poisson_oracle(np.eye(2), v0, h, 0.1)).max() < 1e-4
    s = kl.frozen_duhamel_solve((1.0, 0.0), co, None, v0, 0.1, n_t=2)
    ref = kl.fourier_poisson_oracle(np.eye(2), v0, h, 0.1, shift=(0.1, 0.0))
    assert np.abs(s.values[-1] - ref).max() < 1e-6


def test_duhamel_constant_forcing_linear_in_time():
    v0, h = gauss_box(32)
    co = kl.CoefficientField.constant(np.eye(2), v0.shape, h)
    f = 0.5 * v0
    r = kl.frozen_duhamel_solve(None, co, f, 0 * v0, 0.02, n_t=8)
    # same trapezoid rule in time, exact Fourier propagator in space
    w = np.r_[0.5, np.ones(7), 0.5] * 0.02 / 8
    ref = sum(wk * kl.fourier_poisson_oracle(np.eye(2), f, h, 0.02 - s)
              for wk, s in zip(w, np.linspace(0, 0.02, 9)))
    assert np.abs(r.values[-1] - ref).max() < 0.05 * np.abs(ref).max()
    assert r.values[-1].max() == pytest.approx(0.02 * f.max(), rel=0.05)


# ---- probes

def test_moment_probe_far_limit_is_two():
    # two separated copies of a unit-mass kernel; the overlap defect decays like t/h
    hs = (50.0, 500.0, 5000.0)
    scaled = [h * abs(kl.moment_bound_probe(np.eye(2), 0.0, 0, h, 0.1) - 2) for h in hs]
    assert max(scaled) / min(scaled) < 1.01


def test_moment_integral_linear_for_small_h():
    a = kl.moment_integral(np.eye(2), 0.0, 0, (1e-4, 0.0), 1.0)
    b = kl.moment_integral(np.eye(2), 0.0, 0, (2e-4, 0.0), 1.0)
    assert b / a == pytest.approx(2.0, rel=1e-3)


def test_moment_probe_band():
    vals = [kl.moment_bound_probe(np.eye(2), beta, j, s * t, t)
            for t in (0.1, 1.0) for s in (1 / 8, 1 / 2, 2, 8) for beta in (0.0, 0.5) for j in (0, 1)]
    assert min(vals) > 0.05 and max(vals) < 20


def test_grid_heat_kernel_positive_with_gaussian_shape():
    h = 0.05
    n = 81
    co = kl.CoefficientField.constant(np.array([[1.2, 0.1], [0.1, 0.8]]), (n, n), h)
    k = kl.grid_heat_kernel(co, (40, 40), 0.05)
    assert k.table.min() > -1e-12
    # Dirichlet box of half width 2 loses a little mass at t = 0.05
    assert k.mass() == pytest.approx(1.0, abs=1e-3)
    assert math.isfinite(kl.gaussian_bound_constant(k))


def test_kernel_difference_decay_bounded():
    h = 0.05
    n = 61
    X, Y = np.meshgrid(np.arange(n) * h, np.arange(n) * h, indexing="ij")
    a11 = 1 + 0.1 * np.sin(X)
    co = kl.CoefficientField(a11, 0 * X, 1 + 0 * X, h)
    vals = kl.kernel_difference_decay(co, (30, 30), (0.02, 0.1, 0.3))
    assert max(vals) < 5 and all(np.isfinite(vals))


def test_commutator_and_riesz_probes(rng):
    h = 1 / 20
    X, Y = kl.plane_grid(h, 2.0)
    v = kl.random_window_field(rng, X, Y, n_modes=8, kmax=4.0)
    c = kl.commutator_probe(v, h, (0.05, 0.1, 0.2))
    assert max(c) / min(c) < 10
    a = kl.riesz_gradient_probe(v, h)
    X2, Y2 = kl.plane_grid(h / 2, 2.0)
    v2 = kl.random_window_field(np.random.default_rng(0), X2, Y2, n_modes=8, kmax=4.0)
    v1 = kl.random_window_field(np.random.default_rng(0), X, Y, n_modes=8, kmax=4.0)
    r1, r2 = kl.riesz_gradient_probe(v1, h), kl.riesz_gradient_probe(v2, h / 2)
    assert 0 < a and 0.5 < r2 / r1 < 2
