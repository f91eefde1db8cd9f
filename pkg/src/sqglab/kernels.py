"""Heat and Poisson-type kernels, nonlocal square roots on the plane, the
D-functional, frozen-coefficient Duhamel solves and lower-bound certificates.

Plane fields are 2-D arrays on a uniform grid of spacing ``h``; they are taken
to vanish outside the array. The singular integrals are evaluated as punctured
lattice sums corrected by the lattice zeta constants of the kernel, which makes
the rule accurate to O(h^5) for smooth data instead of O(h).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate, sparse
from scipy.ndimage import correlate1d
from scipy.signal import fftconvolve
from scipy.special import gamma as gamma_fn

from . import _accel
from .spectral import QuadratureSpec, _subordinate_multiplier, subordination_constant

C_TILDE0 = gamma_fn(1.5) / (math.pi * gamma_fn(0.5))   # = 1/(2 pi)
C0 = 1.0 / (2.0 * gamma_fn(0.5))


class RefinementError(RuntimeError):
    """The grid does not resolve the field well enough for the requested rule."""


class ContractionError(RuntimeError):
    pass


def _spd(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape != (2, 2):
        raise ValueError("A must be a 2x2 matrix")
    if abs(A[0, 1] - A[1, 0]) > 1e-12 * max(1.0, np.abs(A).max()):
        raise ValueError("A must be symmetric")
    if np.linalg.eigvalsh(A)[0] <= 0:
        raise ValueError("A must be positive definite")
    return 0.5 * (A + A.T)


def _quad_form(B, z):
    return B[0, 0] * z[..., 0] ** 2 + 2 * B[0, 1] * z[..., 0] * z[..., 1] + B[1, 1] * z[..., 1] ** 2


# ---------------------------------------------------------------- kernels

def gaussian_kernel(A, z, t):
    """(det A)^{-1/2} (4 pi t)^{-1} exp(-A^{-1}z.z / 4t)."""
    A = _spd(A)
    if t <= 0:
        raise ValueError("t must be positive")
    z = np.asarray(z, dtype=float)
    B = np.linalg.inv(A)
    return np.exp(-_quad_form(B, z) / (4 * t)) / (4 * math.pi * t * math.sqrt(np.linalg.det(A)))


def _polar_rule(n_r=48, n_panels=6, n_phi=128):
    """Nodes u in (0,1) (composite Gauss-Legendre) and uniform angles."""
    x, w = np.polynomial.legendre.leggauss(n_r)
    edges = np.linspace(0, 1, n_panels + 1)
    u = (0.5 * (edges[1:] + edges[:-1])[:, None] + 0.5 * np.diff(edges)[:, None] * x).ravel()
    wu = (0.5 * np.diff(edges)[:, None] * w).ravel()
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    return u, wu, phi, 2 * math.pi / n_phi


def polar_integral(f: Callable, scale: float, center=(0.0, 0.0), **rule) -> float:
    """int_{R^2} f(z) dz with r = scale * u/(1-u) and the trapezoid rule in angle."""
    u, wu, phi, wphi = _polar_rule(**rule)
    r = scale * u / (1 - u)
    dr = scale / (1 - u) ** 2
    R, P = np.meshgrid(r, phi, indexing="ij")
    z = np.stack([center[0] + R * np.cos(P), center[1] + R * np.sin(P)], axis=-1)
    vals = f(z) * R
    return float(np.sum(vals * (wu * dr)[:, None]) * wphi)


@lru_cache(maxsize=None)
def half_kernel_constant() -> float:
    """c_1 with c_1 int dx/(1+|x|^2)^{3/2} = 1, by polar quadrature."""
    return 1.0 / polar_integral(lambda z: (1 + z[..., 0] ** 2 + z[..., 1] ** 2) ** -1.5, 1.0)


def half_kernel(A, x, t):
    """Kernel of d_t + L_A^{1/2}: c_1 (det A)^{-1/2} t / (t^2 + A^{-1}x.x)^{3/2}."""
    A = _spd(A)
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    q = _quad_form(np.linalg.inv(A), x)
    return half_kernel_constant() * t / (t * t + q) ** 1.5 / math.sqrt(np.linalg.det(A))


def half_kernel_gradient(A, x, t):
    A = _spd(A)
    B = np.linalg.inv(A)
    x = np.asarray(x, dtype=float)
    q = _quad_form(B, x)
    c = -3.0 * half_kernel_constant() * t / math.sqrt(np.linalg.det(A)) * (t * t + q) ** -2.5
    gx = c * (B[0, 0] * x[..., 0] + B[0, 1] * x[..., 1])
    gy = c * (B[1, 0] * x[..., 0] + B[1, 1] * x[..., 1])
    return np.stack([gx, gy], axis=-1)


@dataclass
class KernelEval:
    """A kernel frozen at one coefficient matrix and time."""
    kind: str                 # "gaussian" | "half" | "grid"
    A: np.ndarray
    t: float
    x0: tuple = (0.0, 0.0)
    table: Optional[np.ndarray] = None     # grid-solved values (kind == "grid")
    h: Optional[float] = None

    def __call__(self, z):
        if self.kind == "gaussian":
            return gaussian_kernel(self.A, z, self.t)
        if self.kind == "half":
            return half_kernel(self.A, z, self.t)
        raise ValueError("grid kernels are tabulated; use .table")

    def mass(self) -> float:
        if self.kind == "grid":
            return float(self.table.sum() * self.h ** 2)
        scale = math.sqrt(self.t) if self.kind == "gaussian" else self.t
        lam = np.linalg.eigvalsh(self.A)
        return polar_integral(self, scale * math.sqrt(lam[-1]))


def kernel_mass(kind, A, t) -> float:
    return KernelEval(kind, _spd(A), t).mass()


def gaussian_semigroup_defect(A, z, t, s) -> float:
    """|int G(z-w,t) G(w,s) dw - G(z,t+s)| / G(z,t+s) by polar quadrature in w."""
    A = _spd(A)
    z = np.asarray(z, dtype=float)
    val = polar_integral(lambda w: gaussian_kernel(A, z - w, t) * gaussian_kernel(A, w, s),
                         math.sqrt(min(t, s) * np.linalg.eigvalsh(A)[-1]),
                         center=tuple(z * s / (t + s)), n_phi=192)
    ref = float(gaussian_kernel(A, z, t + s))
    return abs(val - ref) / ref


def subordination_defect(A, x, t) -> float:
    """Relative gap between (1/sqrt(pi)) int rho^{-1/2} e^{-rho} G_A(x, t^2/4rho) drho and H_A(x,t)."""
    A = _spd(A)
    x = np.asarray(x, dtype=float)

    def g(rho):
        return rho ** -0.5 * math.exp(-rho) * float(gaussian_kernel(A, x, t * t / (4 * rho)))

    val = 0.0
    for a, b in ((0, 1), (1, 10), (10, np.inf)):
        part, _ = integrate.quad(g, a, b, epsabs=0, epsrel=1e-13, limit=200)
        val += part
    val /= math.sqrt(math.pi)
    ref = float(half_kernel(A, x, t))
    return abs(val - ref) / ref


def c_tilde0_by_quadrature(r: float = 1.0) -> float:
    """c_0 int_0^inf G_I(z,s) s^{-3/2} ds * |z|^3, which must reproduce c~_0."""
    f = lambda s: C0 * math.exp(-r * r / (4 * s)) / (4 * math.pi * s) * s ** -1.5
    val = sum(integrate.quad(f, a, b, epsrel=1e-13, limit=200)[0]
              for a, b in ((0, 0.1), (0.1, 10), (10, np.inf)))
    return val * r ** 3


# ---------------------------------------------------------------- lattice machinery

_ALPHAS = {2: ((2, 0), (1, 1), (0, 2)), 4: ((4, 0), (3, 1), (2, 2), (1, 3), (0, 4))}


def _angular(B, cdet, s, alphas, n_phi=256):
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    c, sn = np.cos(phi), np.sin(phi)
    k = cdet * (B[0, 0] * c * c + 2 * B[0, 1] * c * sn + B[1, 1] * sn * sn) ** (-s)
    return np.array([np.mean(k * c ** a * sn ** b) * 2 * math.pi for a, b in alphas])


def lattice_zeta(A, s: float, alphas, eps0: float = 0.25, levels: int = 4) -> np.ndarray:
    """Zeta constants Z_alpha of K(z) = (det A)^{-1/2} (z.A^{-1}z)^{-s} on Z^2.

    Z_alpha is the finite part of sum'_n K(n) n^alpha, obtained from the Gaussian
    regularised difference  sum' K n^a e^{-eps|n|^2} - int K z^a e^{-eps|z|^2}
    which is a power series in eps; Richardson on eps0 / 4^j removes it.
    """
    A = _spd(A)
    B = np.linalg.inv(A)
    cdet = 1.0 / math.sqrt(np.linalg.det(A))
    alphas = tuple(tuple(a) for a in alphas)
    eps = eps0 / 4.0 ** np.arange(levels)
    R = int(math.ceil(math.sqrt(45.0 / eps[-1])))
    n = np.arange(-R, R + 1, dtype=float)
    N1, N2 = np.meshgrid(n, n, indexing="ij")
    r2 = N1 * N1 + N2 * N2
    keep = r2 > 0
    N1, N2, r2 = N1[keep], N2[keep], r2[keep]
    K = cdet * (B[0, 0] * N1 * N1 + 2 * B[0, 1] * N1 * N2 + B[1, 1] * N2 * N2) ** (-s)
    ang = _angular(B, cdet, s, alphas)
    out = np.empty(len(alphas))
    V = np.vander(eps, levels, increasing=True)
    for i, (a, b) in enumerate(alphas):
        F = K * N1 ** a * N2 ** b
        p = 0.5 * (a + b - 2 * s + 2)
        D = np.array([np.sum(F * np.exp(-e * r2)) - ang[i] * gamma_fn(p) / (2 * e ** p) for e in eps])
        out[i] = np.linalg.solve(V, D)[0]
    return out


@lru_cache(maxsize=256)
def _zeta_cached(key, s):
    A = np.array([[key[0], key[1]], [key[1], key[2]]])
    z = lattice_zeta(A, s, _ALPHAS[2] + _ALPHAS[4])
    return {2: z[:3], 4: z[3:]}


def _zeta(A, s=1.5):
    A = _spd(A)
    return _zeta_cached((round(A[0, 0], 13), round(A[0, 1], 13), round(A[1, 1], 13)), s)


def _square_tail(A, M) -> np.ndarray:
    """sum_{|n|_inf > M} K(n) for K = (det A)^{-1/2}(n.A^{-1}n)^{-3/2}.

    Midpoint rule on the exterior of the square of half width M + 1/2, with the
    Laplacian correction -(1/24) int Delta K. ``A`` may be a stack (..., 2, 2).
    """
    A = np.asarray(A, dtype=float)
    single = A.ndim == 2
    A = A.reshape(-1, 2, 2)
    B = np.linalg.inv(A)
    cdet = 1.0 / np.sqrt(np.linalg.det(A))
    x, w = np.polynomial.legendre.leggauss(32)
    edges = np.linspace(-math.pi / 4, 7 * math.pi / 4, 9)
    phi = (0.5 * (edges[1:] + edges[:-1])[:, None] + 0.5 * np.diff(edges)[:, None] * x).ravel()
    wphi = (0.5 * np.diff(edges)[:, None] * w).ravel()
    c, s = np.cos(phi), np.sin(phi)
    Rphi = (M + 0.5) / np.maximum(np.abs(c), np.abs(s))
    q = (B[:, 0, 0, None] * c * c + 2 * B[:, 0, 1, None] * c * s + B[:, 1, 1, None] * s * s)
    bw2 = (B[:, 0, 0, None] * c + B[:, 0, 1, None] * s) ** 2 + (B[:, 1, 0, None] * c + B[:, 1, 1, None] * s) ** 2
    trB = (B[:, 0, 0] + B[:, 1, 1])[:, None]
    base = np.sum(cdet[:, None] * q ** -1.5 / Rphi * wphi, axis=1)
    lap = cdet[:, None] * (-3 * trB * q ** -2.5 + 15 * bw2 * q ** -3.5)
    corr = np.sum(lap * Rphi ** -3 / 3 * wphi, axis=1)
    out = base - corr / 24.0
    return out[0] if single else out


@lru_cache(maxsize=256)
def _epstein_cached(key, M):
    A = np.array([[key[0], key[1]], [key[1], key[2]]])
    B = np.linalg.inv(A)
    n = np.arange(-M, M + 1, dtype=float)
    N1, N2 = np.meshgrid(n, n, indexing="ij")
    q = B[0, 0] * N1 * N1 + 2 * B[0, 1] * N1 * N2 + B[1, 1] * N2 * N2
    q[M, M] = np.inf
    return float(np.sum(q ** -1.5) / math.sqrt(np.linalg.det(A)) + _square_tail(A, M))


def epstein_sum(A, M: int = 300) -> float:
    """sum_{n != 0} (det A)^{-1/2} (n.A^{-1}n)^{-3/2} over Z^2."""
    A = _spd(A)
    return _epstein_cached((round(A[0, 0], 13), round(A[0, 1], 13), round(A[1, 1], 13)), M)


_D1 = np.array([1, -8, 0, 8, -1]) / 12.0
_D2 = np.array([-1, 16, -30, 16, -1]) / 12.0
_D3 = np.array([-1, 2, 0, -2, 1]) / 2.0
_D4 = np.array([1, -4, 6, -4, 1], dtype=float)
_STENCIL = {1: _D1, 2: _D2, 3: _D3, 4: _D4}


def plane_derivatives(u, h, max_order=4) -> dict:
    """Finite-difference partials d^alpha u for 1 <= |alpha| <= max_order (zero outside)."""
    out = {}
    cache = {0: u}
    for a in range(1, max_order + 1):
        cache[a] = correlate1d(u, _STENCIL[a], axis=0, mode="constant") / h ** a
    for a in range(0, max_order + 1):
        for b in range(0, max_order + 1 - a):
            if a + b == 0:
                continue
            f = cache[a]
            if b:
                f = correlate1d(f, _STENCIL[b], axis=1, mode="constant") / h ** b
            out[(a, b)] = f
    return out


def _zeta_correction(taylor: dict, Z: dict, h) -> np.ndarray:
    """-sum_alpha g_alpha h^{|alpha|-1} Z_alpha for the degree 2 and 4 Taylor terms."""
    out = 0.0
    for deg in (2, 4):
        for al, z in zip(_ALPHAS[deg], Z[deg]):
            if al in taylor:
                out = out - taylor[al] * (h ** (deg - 1)) * z
    return out


def _conv_kernel(A, shape, s=1.5):
    B = np.linalg.inv(A)
    p = np.arange(-(shape[0] - 1), shape[0], dtype=float)
    q = np.arange(-(shape[1] - 1), shape[1], dtype=float)
    P, Q = np.meshgrid(p, q, indexing="ij")
    qf = B[0, 0] * P * P + 2 * B[0, 1] * P * Q + B[1, 1] * Q * Q
    qf[shape[0] - 1, shape[1] - 1] = np.inf
    return qf ** (-s) / math.sqrt(np.linalg.det(A))


def _sqrt_taylor(u, h):
    d = plane_derivatives(u, h, 4)
    # f(z) = u(x) - u(x+z): Taylor coefficients -d^alpha u / alpha!
    return {al: -d[al] / (math.factorial(al[0]) * math.factorial(al[1]))
            for deg in (2, 4) for al in _ALPHAS[deg]}


def sqrt_const(A, u, h) -> np.ndarray:
    """L_A^{1/2} u for a constant matrix A by the corrected singular lattice sum.

    c~_0 (det A)^{-1/2} int (u(x) - u(x+z)) / (A^{-1}z.z)^{3/2} dz, with the
    punctured sum over the whole lattice (far field through the Epstein sum)
    plus zeta corrections for the even Taylor terms of degree 2 and 4.
    """
    A = _spd(A)
    u = np.asarray(u, dtype=float)
    W = _conv_kernel(A, u.shape)
    conv = fftconvolve(u, W, mode="same")
    lattice = (epstein_sum(A) * u - conv) / h
    corr = _zeta_correction(_sqrt_taylor(u, h), _zeta(A), h)
    return C_TILDE0 * (lattice + corr)


def inverse_sqrt_identity(v, h) -> np.ndarray:
    """Lambda^{-1} v = (1/2pi) int v(x+z)/|z| dz on the plane, corrected lattice sum."""
    v = np.asarray(v, dtype=float)
    I = np.eye(2)
    W = _conv_kernel(I, v.shape, s=0.5)
    conv = fftconvolve(v, W, mode="same") * h
    Z0 = lattice_zeta(I, 0.5, ((0, 0),))[0]
    Z2 = _zeta_inv2()
    d = plane_derivatives(v, h, 2)
    corr = Z0 * h * v + h ** 3 * (0.5 * d[(2, 0)] * Z2[0] + d[(1, 1)] * Z2[1] + 0.5 * d[(0, 2)] * Z2[2])
    return (conv + corr) / (2 * math.pi)


@lru_cache(maxsize=1)
def _zeta_inv2():
    return lattice_zeta(np.eye(2), 0.5, _ALPHAS[2])


# ---------------------------------------------------------------- variable coefficients

@dataclass
class CoefficientField:
    """Symmetric matrix field A(x) on plane nodes."""
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    h: float
    c1: float = field(init=False)
    c2: float = field(init=False)

    def __post_init__(self):
        self.a11, self.a12, self.a22 = (np.asarray(a, dtype=float) for a in (self.a11, self.a12, self.a22))
        if not (self.a11.shape == self.a12.shape == self.a22.shape):
            raise ValueError("coefficient arrays must share a shape")
        tr = self.a11 + self.a22
        disc = np.sqrt(0.25 * (self.a11 - self.a22) ** 2 + self.a12 ** 2)
        self.c1 = float(np.min(0.5 * tr - disc))
        if self.c1 <= 0:
            raise ValueError("coefficient field is not uniformly elliptic")
        size = float(np.max(0.5 * tr + disc))
        lip = 0.0
        for a in (self.a11, self.a12, self.a22):
            gx, gy = np.gradient(a, self.h)
            lip = max(lip, float(np.max(np.hypot(gx, gy))))
        self.c2 = size + lip

    @classmethod
    def constant(cls, A, shape, h):
        A = _spd(A)
        return cls(np.full(shape, A[0, 0]), np.full(shape, A[0, 1]), np.full(shape, A[1, 1]), h)

    @property
    def shape(self):
        return self.a11.shape

    def matrix(self, i, j) -> np.ndarray:
        return np.array([[self.a11[i, j], self.a12[i, j]], [self.a12[i, j], self.a22[i, j]]])

    def stack(self) -> np.ndarray:
        return np.stack([np.stack([self.a11, self.a12], -1), np.stack([self.a12, self.a22], -1)], -2)

    def is_constant(self, tol=1e-14) -> bool:
        return all(np.ptp(a) <= tol for a in (self.a11, self.a12, self.a22))


def _diff_1d(n, h, periodic):
    if periodic:
        d = sparse.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
        d[n - 1, 0] = 1.0
        s = sparse.diags([np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
        s[n - 1, 0] = 1.0
        return d.tocsr() / h, s.tocsr() * 0.5
    # edges e = 0..n between ghost/node e-1 and node e
    d = sparse.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n)) / h
    s = sparse.diags([np.ones(n), np.ones(n)], [0, -1], shape=(n + 1, n)) * 0.5
    return d.tocsr(), s.tocsr()


def _edge_avg(a, axis, periodic):
    if periodic:
        return 0.5 * (a + np.roll(a, -1, axis=axis))
    p = np.concatenate([np.take(a, [0], axis=axis), a, np.take(a, [-1], axis=axis)], axis=axis)
    lo = np.take(p, np.arange(p.shape[axis] - 1), axis=axis)
    hi = np.take(p, np.arange(1, p.shape[axis]), axis=axis)
    return 0.5 * (lo + hi)


def flux_operator(a11, a12, a22, h, periodic=False) -> sparse.csr_matrix:
    """-d_i(a_ij d_j .) in symmetric flux form.

    a11 and a22 live on the edges (5-point part), a12 on the cells through
    cell-centred gradients. The matrix is symmetric and positive semidefinite
    whenever a12^2 <= a11 a22. Without ``periodic`` the array is the interior
    of a box with zero boundary values.
    """
    nx, ny = a11.shape
    dx, sx = _diff_1d(nx, h, periodic)
    dy, sy = _diff_1d(ny, h, periodic)
    Ix, Iy = sparse.identity(nx), sparse.identity(ny)
    Dx = sparse.kron(dx, Iy)
    Dy = sparse.kron(Ix, dy)
    G1 = sparse.kron(dx, sy)
    G2 = sparse.kron(sx, dy)
    ax = _edge_avg(a11, 0, periodic).ravel()
    ay = _edge_avg(a22, 1, periodic).ravel()
    ac = _edge_avg(_edge_avg(a12, 0, periodic), 1, periodic).ravel()
    L = (Dx.T @ sparse.diags(ax) @ Dx + Dy.T @ sparse.diags(ay) @ Dy
         + G1.T @ sparse.diags(ac) @ G2 + G2.T @ sparse.diags(ac) @ G1)
    return L.tocsr()


def flux_symbol(A, kx, ky, h):
    """Symbol of the constant-coefficient flux stencil at wavenumbers (kx, ky)."""
    a, b = kx * h, ky * h
    return (4 * A[0, 0] * np.sin(a / 2) ** 2 + 4 * A[1, 1] * np.sin(b / 2) ** 2
            + 2 * A[0, 1] * np.sin(a) * np.sin(b)) / h ** 2


def _group_by_matrix(coeffs: CoefficientField, decimals=12):
    keys = np.stack([coeffs.a11, coeffs.a12, coeffs.a22], -1).reshape(-1, 3)
    uniq, inv = np.unique(np.round(keys, decimals), axis=0, return_inverse=True)
    return uniq, inv.reshape(coeffs.shape)


def _zeta_table(uniq, s=1.5, cheb=4):
    """Zeta constants for each row of ``uniq`` (a11, a12, a22).

    Few distinct matrices are handled directly; otherwise the constants are
    interpolated from a tensor Chebyshev grid spanning the coefficient range.
    """
    if len(uniq) <= 3 * cheb:
        rows = [_zeta_cached(tuple(map(float, k)), s) for k in uniq]
        return {deg: np.array([r[deg] for r in rows]) for deg in (2, 4)}
    lo, hi = uniq.min(0), uniq.max(0)
    nodes = []
    for d in range(3):
        if hi[d] - lo[d] < 1e-12:
            nodes.append(np.array([lo[d]]))
        else:
            x = np.cos(np.pi * (np.arange(cheb) + 0.5) / cheb)
            nodes.append(0.5 * (lo[d] + hi[d]) + 0.5 * (hi[d] - lo[d]) * x)
    grid = np.array(np.meshgrid(*nodes, indexing="ij")).reshape(3, -1).T
    vals = [_zeta_cached(tuple(map(float, g)), s) for g in grid]

    def basis(pts):
        cols = []
        scaled = [np.zeros(len(pts)) if len(nodes[d]) == 1 else
                  (2 * pts[:, d] - lo[d] - hi[d]) / (hi[d] - lo[d]) for d in range(3)]
        degs = [len(n) for n in nodes]
        for i in range(degs[0]):
            for j in range(degs[1]):
                for k in range(degs[2]):
                    cols.append(np.polynomial.chebyshev.chebval(scaled[0], np.eye(degs[0])[i])
                                * np.polynomial.chebyshev.chebval(scaled[1], np.eye(degs[1])[j])
                                * np.polynomial.chebyshev.chebval(scaled[2], np.eye(degs[2])[k]))
        return np.array(cols).T

    Vg = basis(grid)
    Vu = basis(uniq)
    out = {}
    for deg in (2, 4):
        Y = np.array([v[deg] for v in vals])
        coef = np.linalg.solve(Vg, Y)
        out[deg] = Vu @ coef
    return out


def sqrt_frozen(coeffs: CoefficientField, u, sample=None) -> np.ndarray:
    """(L_{A(x)}^{1/2} u)(x): the constant-coefficient root frozen at each node x.

    Direct per-node lattice sums (compiled kernel) over the whole array, a
    per-node far-field tail and per-node zeta corrections.
    """
    u = np.asarray(u, dtype=float)
    h = coeffs.h
    if sample is None:
        sample = np.ones(u.shape, dtype=bool)
    stack = coeffs.stack()
    Binv = np.linalg.inv(stack)
    cdet = 1.0 / np.sqrt(np.linalg.det(stack))
    M = max(u.shape) - 1
    raw = _accel.frozen_sum(u, Binv[..., 0, 0], Binv[..., 0, 1], Binv[..., 1, 1], cdet, sample, M)
    uniq, inv = _group_by_matrix(coeffs)
    mats = np.stack([np.stack([uniq[:, 0], uniq[:, 1]], -1), np.stack([uniq[:, 1], uniq[:, 2]], -1)], -2)
    tail = np.atleast_1d(_square_tail(mats, M))[inv]
    Z = _zeta_table(uniq)
    Znode = {deg: Z[deg][inv] for deg in (2, 4)}
    taylor = _sqrt_taylor(u, h)
    corr = 0.0
    for deg in (2, 4):
        for i, al in enumerate(_ALPHAS[deg]):
            corr = corr - taylor[al] * h ** (deg - 1) * Znode[deg][..., i]
    out = C_TILDE0 * ((raw + u * tail) / h + corr)
    return np.where(sample, out, 0.0)


def _periodic_sqrt(L_dense, u, quad: Optional[QuadratureSpec]):
    lam, V = np.linalg.eigh(L_dense)
    lam = np.clip(lam, 0.0, None)
    if quad is None:
        m = np.sqrt(lam)
    else:
        pos = lam[lam > 1e-12 * lam[-1]]
        m = subordination_constant(1.0, quad) * _subordinate_multiplier(lam, 1.0, quad, pos[0], lam[-1])
        m[lam <= 1e-12 * lam[-1]] = 0.0
    return V @ (m * (V.T @ u.ravel()))


def frozen_correction(coeffs: CoefficientField, u, quad: Optional[QuadratureSpec] = None,
                      max_dense: int = 4096) -> np.ndarray:
    """J(x) = (L_{A(x)}^{1/2} u)(x) - (L^{1/2} u)(x) with discrete periodic operators.

    Both roots use the same flux stencil on the same periodic grid: the frozen
    one through its Fourier symbol at A(x), the true one through an
    eigendecomposition of the variable-coefficient matrix (optionally through
    the heat-semigroup subordination integral). J vanishes when A is constant.
    """
    u = np.asarray(u, dtype=float)
    nx, ny = u.shape
    if nx * ny > max_dense:
        raise RefinementError(f"grid {nx}x{ny} too large for the dense square root")
    h = coeffs.h
    L = flux_operator(coeffs.a11, coeffs.a12, coeffs.a22, h, periodic=True).toarray()
    true = _periodic_sqrt(L, u, quad).reshape(u.shape)
    kx = 2 * np.pi * np.fft.fftfreq(nx, d=h)
    ky = 2 * np.pi * np.fft.fftfreq(ny, d=h)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    uh = np.fft.fft2(u)
    frozen = np.empty(u.size)
    stack = coeffs.stack().reshape(-1, 2, 2)
    xs = (np.arange(nx)[:, None] * np.ones(ny)[None, :]).ravel() * h
    ys = (np.ones(nx)[:, None] * np.arange(ny)[None, :]).ravel() * h
    ex = np.exp(1j * np.outer(xs, kx))
    ey = np.exp(1j * np.outer(ys, ky))
    chunk = max(1, 4_000_000 // u.size)
    for a in range(0, u.size, chunk):
        S = stack[a:a + chunk]
        sym = (4 * S[:, 0, 0, None, None] * np.sin(KX * h / 2) ** 2
               + 4 * S[:, 1, 1, None, None] * np.sin(KY * h / 2) ** 2
               + 2 * S[:, 0, 1, None, None] * np.sin(KX * h) * np.sin(KY * h)) / h ** 2
        F = np.sqrt(np.clip(sym, 0, None)) * uh[None]
        # sum_k e^{i(kx x + ky y)} F_k
        tmp = np.einsum("nij,nj->ni", F, ey[a:a + chunk])
        frozen[a:a + chunk] = np.real(np.einsum("ni,ni->n", tmp, ex[a:a + chunk])) / u.size
    frozen = frozen.reshape(u.shape)
    return frozen - true


def sqrt_variable(coeffs: CoefficientField, u, quad: Optional[QuadratureSpec] = None):
    """L^{1/2} u for the variable field A: frozen root at each node minus J.

    Returns (values, J).
    """
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        return np.zeros_like(u), np.zeros_like(u)
    J = frozen_correction(coeffs, u, quad)
    return sqrt_frozen(coeffs, u) - J, J


def frozen_difference_bound(u, h) -> np.ndarray:
    """int |u(x+z) - u(x)| / (|z|^2 (|z|+1)) dz as a punctured lattice sum."""
    u = np.asarray(u, dtype=float)
    nx, ny = u.shape
    p = np.arange(-(nx - 1), nx) * h
    q = np.arange(-(ny - 1), ny) * h
    P, Q = np.meshgrid(p, q, indexing="ij")
    r = np.hypot(P, Q)
    r[nx - 1, ny - 1] = np.inf
    W = h * h / (r * r * (r + 1))
    sample = np.ones(u.shape, dtype=bool)
    pad = max(nx, ny)
    offs = np.stack(np.meshgrid(np.arange(-(nx - 1), nx), np.arange(-(ny - 1), ny), indexing="ij"), -1).reshape(-1, 2)
    w = W.ravel()
    keep = w > 0
    U = np.pad(u, pad)
    # |u(x) - u(x+z)| is not linear, so use direct sums per offset
    out = np.zeros_like(u)
    for (di, dj), wk in zip(offs[keep], w[keep]):
        out += wk * np.abs(u - U[pad + di:pad + di + nx, pad + dj:pad + dj + ny])
    # outer region (u(x+z) = 0): |u(x)| int_{|z|>R} dz / (|z|^2(|z|+1))
    R = h * (min(nx, ny) - 0.5)
    out += np.abs(u) * 2 * math.pi * math.log((R + 1) / R)
    return out


# ---------------------------------------------------------------- D-functional

@dataclass
class DFunctionalResult:
    values: np.ndarray
    samples: np.ndarray
    r_inner: float
    r_outer: float
    error_estimate: float

    def at_samples(self):
        return self.values[self.samples]


def d_functional(f, h, samples=None, A=None) -> DFunctionalResult:
    """D(f)(x) = int |f(x) - f(y)|^2 / |x - y|^3 dy.

    The punctured lattice sum expands into E f^2 - 2 f (K*f) + K*f^2 (exact
    algebra, FFT convolutions); zeta corrections use the Taylor coefficients of
    (f(x) - f(x+z))^2 up to degree 4.
    """
    f = np.asarray(f, dtype=float)
    A = np.eye(2) if A is None else _spd(A)
    if samples is None:
        samples = np.ones(f.shape, dtype=bool)
    W = _conv_kernel(A, f.shape)
    E = epstein_sum(A)
    lattice = (E * f * f - 2 * f * fftconvolve(f, W, mode="same") + fftconvolve(f * f, W, mode="same")) / h
    d = plane_derivatives(f, h, 3)
    g = {}
    g[(2, 0)] = d[(1, 0)] ** 2
    g[(1, 1)] = 2 * d[(1, 0)] * d[(0, 1)]
    g[(0, 2)] = d[(0, 1)] ** 2
    # degree 4: P2^2 + 2 P1 P3
    P2 = {(2, 0): 0.5 * d[(2, 0)], (1, 1): d[(1, 1)], (0, 2): 0.5 * d[(0, 2)]}
    P3 = {(3, 0): d[(3, 0)] / 6, (2, 1): d[(2, 1)] / 2, (1, 2): d[(1, 2)] / 2, (0, 3): d[(0, 3)] / 6}
    P1 = {(1, 0): d[(1, 0)], (0, 1): d[(0, 1)]}
    for al in _ALPHAS[4]:
        g[al] = 0.0
    for a, x in P2.items():
        for b, y in P2.items():
            g[(a[0] + b[0], a[1] + b[1])] = g[(a[0] + b[0], a[1] + b[1])] + x * y
    for a, x in P1.items():
        for b, y in P3.items():
            g[(a[0] + b[0], a[1] + b[1])] = g[(a[0] + b[0], a[1] + b[1])] + 2 * x * y
    Z = _zeta(A)
    corr = _zeta_correction(g, Z, h)
    corr4 = _zeta_correction({al: g[al] for al in _ALPHAS[4]}, {2: np.zeros(3), 4: Z[4]}, h)
    vals = np.maximum(lattice + corr, 0.0)
    err = float(np.max(np.abs(corr4[samples]))) if np.any(samples) else 0.0
    return DFunctionalResult(np.where(samples, vals, 0.0), samples, h, math.inf, err)


# ---------------------------------------------------------------- certificates

@dataclass
class BoundCertificate:
    inequality: str
    family: dict
    ratios: np.ndarray
    min_ratio: float
    config: dict

    def to_dict(self):
        return {"inequality": self.inequality, "family": self.family,
                "min_ratio": float(self.min_ratio), "n_samples": int(self.ratios.size),
                "config": self.config}


def window(X, Y, radius=1.0, width=0.4):
    from .geometry import sigma
    r = np.hypot(X, Y)
    return sigma((radius - r) / width)


def random_window_field(rng, X, Y, n_modes=None, kmax=2 * math.pi, radius=1.0, width=0.4):
    """sum_k a_k cos(k.x + phi_k) times a smooth window."""
    n = int(rng.integers(8, 33)) if n_modes is None else int(n_modes)
    ks = rng.uniform(-kmax, kmax, size=(n, 2))
    a = rng.normal(size=n) / math.sqrt(n)
    ph = rng.uniform(0, 2 * math.pi, size=n)
    v = np.zeros_like(X)
    for kk, aa, pp in zip(ks, a, ph):
        v += aa * np.cos(kk[0] * X + kk[1] * Y + pp)
    return v * window(X, Y, radius, width)


def plane_grid(h, half_width=1.5):
    n = int(round(half_width / h))
    x = np.arange(-n, n + 1) * h
    return np.meshgrid(x, x, indexing="ij")


def _shift(u, k, axis):
    """u(x + k h e_axis) with zero fill."""
    out = np.zeros_like(u)
    if axis == 0:
        out[:u.shape[0] - k] = u[k:]
    else:
        out[:, :u.shape[1] - k] = u[:, k:]
    return out


def lower_bound_certificate(ident: str, family: int = 50, seed: int = 0, h_grid: float = 1 / 40,
                            steps=(0.05, 0.1, 0.2), half_width: float = 1.5) -> BoundCertificate:
    """Measured min ratio for one of the nonlinear lower bounds on a seeded family."""
    rng = np.random.default_rng(seed)
    X, Y = plane_grid(h_grid, half_width)
    fields = [random_window_field(rng, X, Y) for _ in range(family)]
    ratios = []
    conf = {"h_grid": h_grid, "steps": list(steps), "half_width": half_width, "seed": seed}
    inner = np.hypot(X, Y) < 1.0
    if ident == "pointwise_z1":
        vals = []
        for v in fields:
            lhs = v * sqrt_const(np.eye(2), v, h_grid) - 0.5 * sqrt_const(np.eye(2), v * v, h_grid)
            D = d_functional(v, h_grid).values
            vals.append(lhs.min())
            m = D > 1e-6 * D.max()
            ratios.append(np.min(lhs[m] / D[m]))
        conf["min_value"] = float(np.min(vals))
    elif ident == "finite_diff_z16":
        for v in fields:
            sup = np.abs(v).max()
            for step in steps:
                k = int(round(step / h_grid))
                for axis in (0, 1):
                    du = _shift(v, k, axis) - v
                    mag = np.abs(du)
                    sel = (mag >= 0.5 * mag.max()) & inner
                    D = d_functional(du, h_grid).values
                    ratios.append(np.min(D[sel] * sup * step / mag[sel] ** 3))
    elif ident == "cubic_corcorv":
        for v in fields:
            sup = np.abs(v).max()
            d = plane_derivatives(v, h_grid, 1)
            for df in (d[(1, 0)], d[(0, 1)]):
                mag = np.abs(df)
                sel = (mag >= 0.5 * mag.max()) & inner
                D = d_functional(df, h_grid).values
                ratios.append(np.min(D[sel] * sup / mag[sel] ** 3))
    elif ident == "transport_z22":
        for v in fields:
            psi = inverse_sqrt_identity(v, h_grid)
            gx, gy = np.gradient(psi, h_grid)
            sup = np.abs(v).max()
            for step in steps:
                k = int(round(step / h_grid))
                for axis in (0, 1):
                    dv = _shift(v, k, axis) - v
                    dg = np.hypot(_shift(gx, k, axis) - gx, _shift(gy, k, axis) - gy)
                    lhs = dg * dv ** 2 / step
                    D = d_functional(dv, h_grid).values
                    rhs = sup * (D + step ** 2 * math.log(2 / step) ** 6 * sup ** 2)
                    sel = (lhs > 1e-3 * lhs.max()) & inner
                    if np.any(sel):
                        ratios.append(np.min(rhs[sel] / lhs[sel]))
    else:
        raise ValueError(f"unknown inequality {ident!r}")
    ratios = np.array(ratios) if ratios else np.array([1.0])
    fam = {"kind": "random_window_cosines", "size": family, "modes": [8, 32], "kmax": 2 * math.pi}
    return BoundCertificate(ident, fam, ratios, float(ratios.min()), conf)


# ---------------------------------------------------------------- frozen Duhamel

def periodic_half_kernel(A, t, shape, h, shift=(0.0, 0.0), images: int = 12) -> np.ndarray:
    """Periodised H_A(z - shift, t) on the offset grid of a periodic box.

    Direct image sum for |m|_inf <= images plus the far images through the
    t / |z|^3 envelope (square-exterior tail rule).
    """
    A = _spd(A)
    nx, ny = shape
    Px, Py = nx * h, ny * h
    ix = np.fft.fftfreq(nx, 1.0 / nx) * h
    iy = np.fft.fftfreq(ny, 1.0 / ny) * h
    Zx, Zy = np.meshgrid(ix, iy, indexing="ij")
    out = np.zeros(shape)
    for mx in range(-images, images + 1):
        for my in range(-images, images + 1):
            z = np.stack([Zx - shift[0] + mx * Px, Zy - shift[1] + my * Py], -1)
            out += half_kernel(A, z, t)
    if abs(Px - Py) < 1e-12:
        out += half_kernel_constant() * t * _square_tail(A, images) / Px ** 3
    return out


def _poisson_apply(A, v, h, t, shift=(0.0, 0.0)):
    K = periodic_half_kernel(A, t, v.shape, h, shift)
    if t < 2 * h:
        # below the grid scale the samples miss the peak; keep unit discrete mass
        K = K / (K.sum() * h * h)
    return np.real(np.fft.ifft2(np.fft.fft2(K) * np.fft.fft2(v))) * h * h


@dataclass
class DuhamelResult:
    times: np.ndarray
    values: np.ndarray        # (n_t, nx, ny)
    iterations: int
    distances: list


def frozen_duhamel_solve(b, coeffs: CoefficientField, f, v0, T: float, n_t: int = 8,
                         tol: float = 1e-8, max_iter: int = 50) -> DuhamelResult:
    """Fixed-point iteration of the frozen-coefficient Duhamel formula with x0 = x.

    ``b(t)`` returns a constant drift vector, ``f(t)`` a plane field (or None).
    The box is treated as periodic. For variable A the forcing picks up the
    frozen-versus-true correction -J of the current iterate.
    """
    v0 = np.asarray(v0, dtype=float)
    h = coeffs.h
    times = np.linspace(0, T, n_t + 1)
    bfun = (lambda t: np.zeros(2)) if b is None else (b if callable(b) else (lambda t, c=np.asarray(b, float): c))
    ffun = (lambda t: np.zeros_like(v0)) if f is None else (f if callable(f) else (lambda t, c=f: c))
    const = coeffs.is_constant()
    A = coeffs.matrix(0, 0)

    def drift_integral(s, t):
        tt = np.linspace(s, t, 9)
        vals = np.array([bfun(x) for x in tt])
        return np.trapezoid(vals, tt, axis=0) if hasattr(np, "trapezoid") else np.trapz(vals, tt, axis=0)

    def propagate(g, s, t):
        if t - s <= 0:
            return g
        if not const:
            raise NotImplementedError("variable coefficients need per-node kernels; use constant A")
        return _poisson_apply(A, g, h, t - s, tuple(drift_integral(s, t)))

    v = np.zeros((n_t + 1,) + v0.shape)
    dists = []
    for it in range(1, max_iter + 1):
        new = np.empty_like(v)
        F = []
        for k, t in enumerate(times):
            Fk = ffun(t)
            if not const and np.any(v[k]):
                Fk = Fk - frozen_correction(coeffs, v[k])
            F.append(Fk)
        for k, t in enumerate(times):
            acc = propagate(v0, 0.0, t)
            if k > 0:
                w = np.full(k + 1, times[1] - times[0])
                w[0] *= 0.5
                w[-1] *= 0.5
                for j in range(k + 1):
                    if np.any(F[j]):
                        acc = acc + w[j] * propagate(F[j], times[j], t)
            new[k] = acc
        d = float(np.max(np.abs(new - v)))
        dists.append(d)
        v = new
        if d < tol or (it > 1 and dists[-1] == 0.0):
            break
        if it >= 3 and dists[-1] > dists[-2] > dists[-3]:
            raise ContractionError("frozen Duhamel iteration does not contract; reduce T")
    return DuhamelResult(times, v, len(dists), dists)


def fourier_poisson_oracle(A, v0, h, t, shift=(0.0, 0.0)):
    """e^{-t |A^{1/2} k|} e^{-i k.shift} applied on the periodic box."""
    A = _spd(A)
    nx, ny = v0.shape
    kx = 2 * np.pi * np.fft.fftfreq(nx, d=h)
    ky = 2 * np.pi * np.fft.fftfreq(ny, d=h)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    sym = np.sqrt(A[0, 0] * KX ** 2 + 2 * A[0, 1] * KX * KY + A[1, 1] * KY ** 2)
    return np.real(np.fft.ifft2(np.exp(-t * sym - 1j * (KX * shift[0] + KY * shift[1])) * np.fft.fft2(v0)))


# ---------------------------------------------------------------- probes

def _panel_nodes(breaks, order=16):
    x, w = np.polynomial.legendre.leggauss(order)
    breaks = np.unique(np.asarray(breaks, dtype=float))
    a, b = breaks[:-1], breaks[1:]
    nodes = (0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * x).ravel()
    weights = (0.5 * (b - a)[:, None] * w).ravel()
    return nodes, weights


def moment_integral(A, beta: float, j: int, hvec, t: float) -> float:
    """int |delta_h^z grad^j H_A(z, t)| |z|^beta dz in polar coordinates about -h/2."""
    A = _spd(A)
    hvec = np.asarray(hvec, dtype=float)
    hn = float(np.hypot(*hvec))
    c = -0.5 * hvec
    half = 0.5 * hn
    g = 2.0 ** np.arange(-1, 60)
    g = g[t * g < max(half, t)]
    scales = t * np.concatenate([-g, [0.0], g])
    rb = np.concatenate([[0.0], np.clip(half + scales, 0, None), half + (t + hn) * np.geomspace(1, 1e3, 8)])
    R = rb.max()
    r, wr = _panel_nodes(rb)
    # tail r in [R, inf): r = R/u
    uu, wu = _panel_nodes([0.0, 0.25, 0.5, 1.0])
    r = np.concatenate([r, R / uu])
    wr = np.concatenate([wr, wu * R / uu ** 2])
    ph0 = math.atan2(hvec[1], hvec[0])
    rel = min(1.0, t / max(half, 1e-300))
    off = rel * np.concatenate([[0.0], 4.0 ** np.arange(-1, 40)])
    off = off[off < math.pi / 2]
    pb = np.concatenate([ph0 + s * off for s in (-1, 1)] + [ph0 + math.pi + s * off for s in (-1, 1)]
                        + [[ph0 + math.pi / 2, ph0 - math.pi / 2]])
    pb = np.mod(pb - ph0 + math.pi / 2, 2 * math.pi) + ph0 - math.pi / 2
    pb = np.concatenate([pb, [ph0 - math.pi / 2, ph0 + 3 * math.pi / 2]])
    phi, wphi = _panel_nodes(pb)
    Rr, Pp = np.meshgrid(r, phi, indexing="ij")
    z = np.stack([c[0] + Rr * np.cos(Pp), c[1] + Rr * np.sin(Pp)], -1)
    if j == 0:
        dv = np.abs(half_kernel(A, z + hvec, t) - half_kernel(A, z, t))
    else:
        g = half_kernel_gradient(A, z + hvec, t) - half_kernel_gradient(A, z, t)
        dv = np.hypot(g[..., 0], g[..., 1])
    integrand = dv * np.hypot(z[..., 0], z[..., 1]) ** beta * Rr
    return float(np.sum(integrand * wr[:, None] * wphi[None, :]))


def moment_bound_probe(coeffs, beta: float, j: int, h: float, t: float, n_sample: int = 5) -> float:
    """sup over sampled nodes of the moment integral divided by min(|h|/t,1)^{1-beta}|h|^beta/t^j."""
    if not (0 <= beta < 1) or j not in (0, 1):
        raise ValueError("need 0 <= beta < 1 and j in {0, 1}")
    if isinstance(coeffs, CoefficientField):
        idx = np.linspace(0, coeffs.a11.size - 1, n_sample).astype(int)
        mats = [coeffs.matrix(*np.unravel_index(k, coeffs.shape)) for k in idx]
    else:
        mats = [_spd(coeffs)]
    best = 0.0
    for A in mats:
        val = moment_integral(A, beta, j, (h, 0.0), t)
        best = max(best, val)
    return best / (min(h / t, 1.0) ** (1 - beta) * h ** beta / t ** j)


def grid_heat_kernel(coeffs: CoefficientField, src, t: float, dt: Optional[float] = None) -> KernelEval:
    """H_L(., src, t) by Crank-Nicolson from a Gaussian of width 2h at t0 = h^2 (Dirichlet box)."""
    from scipy.sparse.linalg import splu
    h = coeffs.h
    i0, j0 = src
    nx, ny = coeffs.shape
    t0 = h * h
    if t <= t0:
        raise ValueError("t must exceed the initialisation time h^2")
    x = (np.arange(nx) - i0) * h
    y = (np.arange(ny) - j0) * h
    Xr, Yr = np.meshgrid(x, y, indexing="ij")
    A0 = coeffs.matrix(i0, j0)
    H = gaussian_kernel(A0, np.stack([Xr, Yr], -1), t0).ravel()
    L = flux_operator(coeffs.a11, coeffs.a12, coeffs.a22, h)
    dt = dt or min(0.25 * h, (t - t0) / 8)
    n = max(1, int(math.ceil((t - t0) / dt)))
    dt = (t - t0) / n
    I = sparse.identity(L.shape[0], format="csc")
    lu = splu((I + 0.5 * dt * L).tocsc())
    R = (I - 0.5 * dt * L).tocsr()
    for _ in range(n):
        H = lu.solve(R @ H)
        if not np.all(np.isfinite(H)):
            raise RefinementError(f"heat solve unstable (dt={dt:.2e}, h={h:.2e})")
    return KernelEval("grid", A0, t, x0=(i0, j0), table=H.reshape(nx, ny), h=h)


def gaussian_bound_constant(kern: KernelEval, floor: float = 1e-10) -> float:
    """Smallest c >= 1 with c^-1 t^-1 e^{-c|z|^2/t} <= H <= c t^-1 e^{-|z|^2/(ct)} on resolved nodes."""
    H = kern.table
    h, t = kern.h, kern.t
    nx, ny = H.shape
    i0, j0 = kern.x0
    x = (np.arange(nx) - i0) * h
    y = (np.arange(ny) - j0) * h
    r2 = (x[:, None] ** 2 + y[None, :] ** 2)
    m = H > floor * H.max()
    Ht, r2 = H[m] * t, r2[m] / t

    def ok(c):
        return np.all(Ht <= c * np.exp(-r2 / c)) and np.all(Ht >= np.exp(-c * r2) / c)

    lo, hi = 1.0, 2.0
    while not ok(hi):
        hi *= 2
        if hi > 1e6:
            return math.inf
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def kernel_difference_decay(coeffs: CoefficientField, src, times) -> list:
    """sup_z |H_L(x, x+z, t) - G_{A(x+z)}(z, t)| t^{1/2} for each t (reported, not bounded)."""
    out = []
    h = coeffs.h
    nx, ny = coeffs.shape
    i0, j0 = src
    x = (np.arange(nx) - i0) * h
    y = (np.arange(ny) - j0) * h
    Z = np.stack(np.meshgrid(x, y, indexing="ij"), -1)
    for t in times:
        H = grid_heat_kernel(coeffs, src, t).table
        G = np.empty_like(H)
        uniq, inv = _group_by_matrix(coeffs)
        for g, key in enumerate(uniq):
            A = np.array([[key[0], key[1]], [key[1], key[2]]])
            sel = inv == g
            G[sel] = gaussian_kernel(A, Z[sel], t)
        out.append(float(np.max(np.abs(H - G)) * math.sqrt(t)))
    return out


def commutator_probe(v, h, steps, alpha=0.5) -> list:
    """sup |delta_s L^{1/2} v - L^{1/2} delta_s v| / s^{1-alpha} along e_1 (A = I)."""
    Lv = sqrt_const(np.eye(2), v, h)
    out = []
    for s in steps:
        k = int(round(s / h))
        dv = _shift(v, k, 0) - v
        diff = (_shift(Lv, k, 0) - Lv) - sqrt_const(np.eye(2), dv, h)
        interior = slice(0, v.shape[0] - k)
        out.append(float(np.max(np.abs(diff[interior])) / s ** (1 - alpha)))
    return out


def riesz_gradient_probe(v, h, alpha=0.5) -> float:
    """C with [grad Lambda^{-1} v]_alpha <= C ([v]_alpha + |v|_{L^1}) (finite differences, A = I)."""
    psi = inverse_sqrt_identity(v, h)
    gx, gy = np.gradient(psi, h)

    def semi(f):
        best = 0.0
        for k in (1, 2, 4, 8):
            for axis in (0, 1):
                best = max(best, float(np.max(np.abs(_shift(f, k, axis) - f)[:-k or None]) / (k * h) ** alpha))
        return best

    return max(semi(gx), semi(gy)) / (semi(v) + float(np.abs(v).sum() * h * h))
