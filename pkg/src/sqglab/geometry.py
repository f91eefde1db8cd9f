"""Boundary-flattening map for a boundary given as a graph x2 = phi(x1).

Y2 = x2 - phi(x1). Y1 = x1 + chi(x2) * int_0^{x1} (gamma(z, x2) - 1) dz where gamma
solves N.grad gamma = phi'' gamma, N = (-phi', 1), with gamma = 1 on the curve.
gamma is obtained by following the characteristic through a point back to the
curve, parametrized by tau = Y2 so that every point needs a single trace.

Along a characteristic Z = int gamma dx1 is constant, which gives the closed form
int_0^{x1} gamma(z, x2) dz = xi0 + int_0^{xi0} phi'^2, xi0 the footpoint. Pointwise
evaluation uses it; the grid report also does the cumulative quadrature directly
and records the difference between the two.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

GL8 = np.polynomial.legendre.leggauss(8)


class GeometryError(ValueError):
    pass


class InversionError(RuntimeError):
    pass


def sigma(r):
    """Smooth step: 0 for r <= 0, 1 for r >= 1, C-infinity in between."""
    r = np.asarray(r, float)
    out = np.where(r >= 1, 1.0, 0.0)
    m = (r > 0) & (r < 1)
    if np.any(m):
        rm = r[m]
        a = np.exp(-1.0 / rm)
        b = np.exp(-1.0 / (1.0 - rm))
        out = out.copy()
        out[m] = a / (a + b)
    return out


def dsigma(r):
    r = np.asarray(r, float)
    out = np.zeros_like(r)
    m = (r > 0) & (r < 1)
    if np.any(m):
        rm = r[m]
        a = np.exp(-1.0 / rm)
        b = np.exp(-1.0 / (1.0 - rm))
        da = a / rm ** 2
        db = -b / (1.0 - rm) ** 2
        out[m] = (da * b - a * db) / (a + b) ** 2
    return out


def d2sigma(r):
    # sigma = 1/(1 + e^p), p = 1/r - 1/(1-r)
    r = np.asarray(r, float)
    out = np.zeros_like(r)
    m = (r > 0) & (r < 1)
    if np.any(m):
        rm = r[m]
        s = sigma(rm)
        p1 = -1.0 / rm ** 2 - 1.0 / (1.0 - rm) ** 2
        p2 = 2.0 / rm ** 3 - 2.0 / (1.0 - rm) ** 3
        ds = -s * (1 - s) * p1
        out[m] = -ds * (1 - 2 * s) * p1 - s * (1 - s) * p2
    return out


_d2sigma = d2sigma


@dataclass
class BoundaryGraph:
    phi: Callable
    dphi: Callable
    ddphi: Callable
    sqint: Callable          # int_0^x phi'(z)^2 dz
    ell: float
    eps: float
    H: float
    name: str = "custom"
    breakpoints: tuple = ()

    def __post_init__(self):
        if not self.H > self.eps * self.ell:
            raise GeometryError(f"need H > eps*ell ({self.H} <= {self.eps * self.ell})")
        xs = np.linspace(-1.2 * self.ell, 1.2 * self.ell, 4801)
        d = np.abs(self.dphi(xs))
        if d.max() > self.eps * (1 + 1e-12):
            raise GeometryError(f"|phi'| reaches {d.max():.4g} > eps = {self.eps}")
        if abs(float(self.phi(np.array([0.0]))[0])) > 1e-14 or abs(float(self.dphi(np.array([0.0]))[0])) > 1e-14:
            raise GeometryError("need phi(0) = phi'(0) = 0")
        out = np.abs(xs) >= self.ell
        if np.any(self.dphi(xs[out]) != 0):
            raise GeometryError("phi' must vanish for |x1| >= ell")

    @property
    def C0(self) -> float:
        xs = np.linspace(-self.ell, self.ell, 4001)
        return float(np.abs(self.ddphi(xs)).max())

    def chi(self, x2):
        return sigma((2 * self.H - np.abs(x2)) / self.H)

    def dchi(self, x2):
        x2 = np.asarray(x2, float)
        return -np.sign(x2) * dsigma((2 * self.H - np.abs(x2)) / self.H) / self.H

    def d2chi(self, x2):
        x2 = np.asarray(x2, float)
        return _d2sigma((2 * self.H - np.abs(x2)) / self.H) / self.H ** 2


# ---------------------------------------------------------------- presets

def _tabulate(r, ell, breaks, n=6000):
    """phi', phi and int phi'^2 from phi'' = r by piecewise Gauss quadrature on [0, ell].

    Returns Hermite interpolants (odd/even symmetry applied by the caller).
    """
    x = np.unique(np.concatenate([np.linspace(0, ell, n + 1), np.asarray(breaks, float)]))
    gx, gw = GL8
    a, b = x[:-1], x[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    pts = mid[:, None] + half[:, None] * gx[None, :]
    w = half[:, None] * gw[None, :]
    rv = r(pts)
    d1 = np.concatenate([[0.0], np.cumsum((rv * w).sum(1))])
    # phi(x_k+1) - phi(x_k) = int (x_k+1 - t) r dt + (x_k+1 - x_k) phi'(x_k)
    inc0 = ((b[:, None] - pts) * rv * w).sum(1) + (b - a) * d1[:-1]
    d0 = np.concatenate([[0.0], np.cumsum(inc0)])
    # int phi'^2 needs phi' at the Gauss points: phi'(t) = phi'(a) + int_a^t r
    # computed with a nested rule (exact to round-off for smooth r)
    tt = pts[:, :, None]
    inner_pts = a[:, None, None] + (tt - a[:, None, None]) * 0.5 * (1 + gx[None, None, :])
    inner_w = (tt - a[:, None, None]) * 0.5 * gw[None, None, :]
    dp_at = d1[:-1, None] + (r(inner_pts) * inner_w).sum(2)
    q = np.concatenate([[0.0], np.cumsum((dp_at ** 2 * w).sum(1))])
    rx = r(x)
    return x, d0, d1, rx, q


def _graph_from_tables(x, d0, d1, rx, q, r, ell, eps, H, name, breaks):
    sp_d1 = CubicHermiteSpline(x, d1, rx)
    sp_d0 = CubicHermiteSpline(x, d0, d1)
    sp_q = CubicHermiteSpline(x, q, d1 ** 2)
    # the moment conditions make phi(ell) vanish up to round-off; pin it to 0
    phi_end, q_end = 0.0, q[-1]

    def phi(t):
        t = np.asarray(t, float)
        a = np.minimum(np.abs(t), ell)
        v = sp_d0(a)
        return np.where(np.abs(t) >= ell, phi_end, v)

    def dphi(t):
        t = np.asarray(t, float)
        v = np.sign(t) * sp_d1(np.minimum(np.abs(t), ell))
        return np.where(np.abs(t) >= ell, 0.0, v)

    def ddphi(t):
        t = np.asarray(t, float)
        return np.where(np.abs(t) >= ell, 0.0, r(np.abs(t)))

    def sqint(t):
        t = np.asarray(t, float)
        return np.sign(t) * np.where(np.abs(t) >= ell, q_end, sp_q(np.minimum(np.abs(t), ell)))

    return BoundaryGraph(phi, dphi, ddphi, sqint, ell, eps, H, name, tuple(breaks))


def _step(x, x0, d):
    return sigma((np.abs(x) - x0) / d)


def parabola_graph(eps=0.1, ell=0.5, H=0.1) -> BoundaryGraph:
    """phi = x1^2/2 exactly on |x1| <= eps/2, bent back so that phi = phi' = 0 for |x1| >= ell."""
    a = d = 0.5 * eps
    m = 0.5 * ell
    if a + d >= m or m + d >= ell - d:
        raise GeometryError("ell too small for the parabola window")
    b0 = lambda x: 1.0 - _step(x, a, d)
    b1 = lambda x: _step(x, a, d) - _step(x, m, d)
    b2 = lambda x: _step(x, m, d) - _step(x, ell - d, d)
    breaks = [0.0, a, a + d, m, m + d, ell - d, ell]
    # moments int_0^ell b and int_0^ell (ell - x) b
    xs, ws = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        e = np.linspace(lo, hi, 41)
        mid, half = 0.5 * (e[1:] + e[:-1]), 0.5 * np.diff(e)
        xs.append((mid[:, None] + half[:, None] * GL8[0]).ravel())
        ws.append((half[:, None] * GL8[1]).ravel())
    xq, wq = np.concatenate(xs), np.concatenate(ws)
    mom = lambda f: np.array([np.sum(f(xq) * wq), np.sum((ell - xq) * f(xq) * wq)])
    M = np.column_stack([mom(b1), mom(b2)])
    c1, c2 = np.linalg.solve(M, -mom(b0))

    def r(x):
        x = np.asarray(x, float)
        return b0(x) + c1 * b1(x) + c2 * b2(x)

    tabs = _tabulate(r, ell, breaks)
    return _graph_from_tables(*tabs, r, ell, eps, H, "parabola", breaks)


def bump_graph(eps=0.1, ell=0.5, H=0.1) -> BoundaryGraph:
    """phi = A x^2 (1 - x^2/ell^2)^3 on |x| < ell, A chosen so max|phi'| = 0.9 eps."""
    P = np.polynomial.Polynomial
    base = P([0, 0, 1]) * P([1, 0, -1.0 / ell ** 2]) ** 3
    xs = np.linspace(0, ell, 20001)
    A = 0.9 * eps / np.abs(base.deriv()(xs)).max()
    p = A * base
    dp, ddp = p.deriv(), p.deriv(2)
    qp = (dp * dp).integ()
    inside = lambda t: np.abs(np.asarray(t, float)) < ell
    return BoundaryGraph(
        lambda t: np.where(inside(t), p(np.asarray(t, float)), 0.0),
        lambda t: np.where(inside(t), dp(np.asarray(t, float)), 0.0),
        lambda t: np.where(inside(t), ddp(np.asarray(t, float)), 0.0),
        lambda t: np.sign(t) * qp(np.minimum(np.abs(np.asarray(t, float)), ell)),
        ell, eps, H, "bump", (0.0, ell))


def flat_graph(eps=0.1, ell=0.5, H=0.1) -> BoundaryGraph:
    z = lambda t: np.zeros_like(np.asarray(t, float))
    return BoundaryGraph(z, z, z, z, ell, eps, H, "flat", (0.0, ell))


def file_graph(path, eps=0.1, ell=0.5, H=0.1) -> BoundaryGraph:
    """phi from two-column text samples (x1, phi), blended to zero near |x1| = ell."""
    data = np.loadtxt(path)
    sp = CubicSpline(data[:, 0], data[:, 1])
    d = 0.1 * ell
    w = lambda t: 1.0 - _step(t, ell - d, d)
    f = lambda t: sp(np.asarray(t, float)) - sp(0.0) - sp(0.0, 1) * np.asarray(t, float)
    phi = lambda t: f(t) * w(t)
    h = 1e-5
    dphi = lambda t: np.where(np.abs(t) >= ell, 0.0, (phi(np.asarray(t) + h) - phi(np.asarray(t) - h)) / (2 * h))
    ddphi = lambda t: np.where(np.abs(t) >= ell, 0.0,
                               (phi(np.asarray(t) + h) - 2 * phi(t) + phi(np.asarray(t) - h)) / h ** 2)
    xs = np.linspace(0, ell, 4001)
    qv = np.concatenate([[0.0], np.cumsum(0.5 * (dphi(xs[1:]) ** 2 + dphi(xs[:-1]) ** 2) * np.diff(xs))])
    qs = CubicSpline(xs, qv)
    sqint = lambda t: np.sign(t) * qs(np.minimum(np.abs(np.asarray(t, float)), ell))
    return BoundaryGraph(phi, dphi, ddphi, sqint, ell, eps, H, "file", (0.0, ell))


PRESETS = {"flat": flat_graph, "parabola": parabola_graph, "bump": bump_graph}


def make_graph(preset: str, eps=0.1, ell=0.5, H=0.1) -> BoundaryGraph:
    if preset in PRESETS:
        return PRESETS[preset](eps, ell, H)
    return file_graph(preset, eps, ell, H)


# ---------------------------------------------------------------- characteristics

def trace(graph: BoundaryGraph, x1, x2, ds: float):
    """Follow characteristics from (x1, x2) back to the curve.

    Returns (footpoint xi0, gamma). RK4 in tau = x2 - phi(x1) with a common
    number of steps so that every step is at most ``ds``.
    """
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    tau0 = x2 - graph.phi(x1)
    tmax = float(np.abs(tau0).max()) if tau0.size else 0.0
    n = max(1, int(math.ceil(tmax / ds)))
    dt = -tau0 / n

    def rhs(xi):
        p = graph.dphi(xi)
        den = 1.0 + p * p
        return -p / den, graph.ddphi(xi) / den

    xi = x1.copy()
    L = np.zeros_like(x1)
    for _ in range(n):
        k1x, k1l = rhs(xi)
        k2x, k2l = rhs(xi + 0.5 * dt * k1x)
        k3x, k3l = rhs(xi + 0.5 * dt * k2x)
        k4x, k4l = rhs(xi + dt * k3x)
        xi = xi + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        L = L + dt / 6 * (k1l + 2 * k2l + 2 * k3l + k4l)
    return xi, np.exp(-L)


@dataclass
class GammaField:
    x1: np.ndarray
    x2: np.ndarray
    values: np.ndarray       # (len(x1), len(x2))
    footpoints: np.ndarray
    h: float
    graph: BoundaryGraph

    def pde_residual(self, region=None):
        """Centered-difference N.grad gamma - phi'' gamma at interior nodes."""
        g = self.values
        h1 = self.x1[1] - self.x1[0]
        h2 = self.x2[1] - self.x2[0]
        X1, _ = np.meshgrid(self.x1, self.x2, indexing="ij")
        d1 = (g[2:, 1:-1] - g[:-2, 1:-1]) / (2 * h1)
        d2 = (g[1:-1, 2:] - g[1:-1, :-2]) / (2 * h2)
        xi = X1[1:-1, 1:-1]
        res = -self.graph.dphi(xi) * d1 + d2 - self.graph.ddphi(xi) * g[1:-1, 1:-1]
        if region is not None:
            res = res[region[1:-1, 1:-1]]
        return res


def grid_axes(graph: BoundaryGraph, h: float, margin: float = 0.1):
    L1 = graph.ell + margin
    L2 = 3 * graph.H
    n1 = int(round(L1 / h))
    n2 = int(round(L2 / h))
    return np.arange(-n1, n1 + 1) * h, np.arange(-n2, n2 + 1) * h


def solve_gamma(graph: BoundaryGraph, h: float = 0.01, axes=None) -> GammaField:
    x1, x2 = axes if axes is not None else grid_axes(graph, h)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    xi, g = trace(graph, X1.ravel(), X2.ravel(), h / 4)
    return GammaField(x1, x2, g.reshape(X1.shape), xi.reshape(X1.shape), h, graph)


# ---------------------------------------------------------------- the map

@dataclass
class DiffeoMap:
    graph: BoundaryGraph
    gamma: GammaField
    ds: float
    report: dict = field(default_factory=dict)
    fd_step: float = 1e-5

    def _integral(self, x1, x2):
        """I = int_0^{x1} (gamma(z, x2) - 1) dz via the footpoint identity, and gamma."""
        xi, g = trace(self.graph, x1, x2, self.ds)
        I = xi + self.graph.sqint(xi) - x1
        return I, g, xi

    def Y(self, x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        I, _, _ = self._integral(x1, x2)
        return x1 + self.graph.chi(x2) * I, x2 - self.graph.phi(x1)

    def jacobian(self, x1, x2):
        """Entries (d1Y1, d2Y1, d1Y2, d2Y2).

        d2Y1 = chi' I + chi dI/dx2 with dI/dx2 from footpoint differences; the
        identity dI/dx2 = phi' gamma is not used so the orthogonality check is real.
        """
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        G = self.graph
        I, g, _ = self._integral(x1, x2)
        d = self.fd_step
        Ip, _, _ = self._integral(x1, x2 + d)
        Im, _, _ = self._integral(x1, x2 - d)
        J = (Ip - Im) / (2 * d)
        chi = G.chi(x2)
        a11 = 1.0 + chi * (g - 1.0)
        a12 = G.dchi(x2) * I + chi * J
        return a11, a12, -G.dphi(x1), np.ones_like(x1)

    def det(self, x1, x2):
        a11, a12, a21, a22 = self.jacobian(x1, x2)
        return a11 * a22 - a12 * a21

    def X(self, y1, y2, tol=1e-12, maxit=50):
        return invert_diffeo(self, y1, y2, tol, maxit)


def build_diffeo(graph: BoundaryGraph, gamma: GammaField, check: bool = True) -> DiffeoMap:
    """Assemble Y on the gamma grid and verify its invariants.

    The report includes the cumulative-quadrature value of Y1 on the grid rows
    compared with the footpoint formula used for pointwise evaluation.
    """
    m = DiffeoMap(graph, gamma, gamma.h / 4)
    x1, x2 = gamma.x1, gamma.x2
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    a11, a12, a21, a22 = m.jacobian(X1, X2)
    dev = max(np.abs(a11 - 1).max(), np.abs(a12).max(), np.abs(a21).max(), np.abs(a22 - 1).max())
    det = a11 * a22 - a12 * a21
    cross = a11 * a21 + a12 * a22
    gam = gamma.values
    dist = np.abs(X2 - graph.phi(X1)) / np.sqrt(1 + graph.dphi(X1) ** 2)
    strip = dist < 0.5 * graph.H
    supp = graph.chi(X2) > 0
    # Y1 by cumulative Gauss quadrature along each row
    quad_dev = 0.0
    rows = np.nonzero(np.abs(x2) < 2 * graph.H)[0]
    gx, gw = GL8
    inside = np.abs(x1) <= graph.ell + 1e-12
    xs = x1[inside]
    a, b = xs[:-1], xs[1:]
    half, mid = 0.5 * (b - a), 0.5 * (a + b)
    pts = (mid[:, None] + half[:, None] * gx).ravel()
    if rows.size and xs.size > 1:
        P1 = np.tile(pts, rows.size)
        P2 = np.repeat(x2[rows], pts.size)
        _, gq = trace(graph, P1, P2, m.ds)
        gq = gq.reshape(rows.size, a.size, gx.size)
        cell = ((gq - 1.0) * (half[:, None] * gw)).sum(2)
        cum = np.concatenate([np.zeros((rows.size, 1)), np.cumsum(cell, 1)], 1)
        k0 = int(np.argmin(np.abs(xs)))
        cum = cum - cum[:, [k0]]
        shape = (xs.size, rows.size)
        I_direct, _, _ = m._integral(np.broadcast_to(xs[:, None], shape),
                                     np.broadcast_to(x2[rows], shape))
        quad_dev = float(np.abs(I_direct - cum.T).max())
    rep = {
        "grad_dev_max": float(dev),
        "det_min": float(det.min()),
        "det_max": float(det.max()),
        "cross_strip_max": float(np.abs(cross[strip]).max()) if strip.any() else 0.0,
        "gamma_min_on_support": float(gam[supp].min()),
        "gamma_max_on_support": float(gam[supp].max()),
        "y1_quadrature_vs_footpoint": quad_dev,
        "dchi_max_times_H": float(np.abs(graph.dchi(x2)).max() * graph.H),
        "eps": graph.eps, "ell": graph.ell, "H": graph.H, "h": gamma.h,
    }
    m.report = rep
    if check:
        if dev > 0.25:
            raise GeometryError(f"|grad Y - I|_inf = {dev:.4f} > 1/4; reduce eps or H")
        if det.min() <= 0:
            raise GeometryError("det grad Y is not positive; reduce eps or H")
    return m


def invert_diffeo(m: DiffeoMap, y1, y2, tol=1e-12, maxit=50):
    """Newton iteration for X = Y^{-1} started at x = y."""
    y1 = np.asarray(y1, float)
    y2 = np.asarray(y2, float)
    x1, x2 = y1.copy(), y2.copy()
    res = math.inf
    for it in range(maxit):
        f1, f2 = m.Y(x1, x2)
        r1, r2 = f1 - y1, f2 - y2
        res = float(np.max(np.hypot(r1, r2))) if r1.size else 0.0
        if res < tol:
            return x1, x2
        a11, a12, a21, a22 = m.jacobian(x1, x2)
        det = a11 * a22 - a12 * a21
        x1 = x1 - (a22 * r1 - a12 * r2) / det
        x2 = x2 - (-a21 * r1 + a11 * r2) / det
    f1, f2 = m.Y(x1, x2)
    res = float(np.max(np.hypot(f1 - y1, f2 - y2)))
    if res < tol:
        return x1, x2
    raise InversionError(f"Newton did not converge in {maxit} iterations, residual {res:.3e}")


@dataclass
class ConjugatedCoefficients:
    y1: np.ndarray
    y2: np.ndarray
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    a: np.ndarray
    strip: np.ndarray

    def min_eig(self):
        tr = self.a11 + self.a22
        disc = np.sqrt(0.25 * (self.a11 - self.a22) ** 2 + self.a12 ** 2)
        return 0.5 * tr - disc


def conjugated_coefficients(m: DiffeoMap, y1, y2) -> ConjugatedCoefficients:
    """a_ij = (grad Y_i . grad Y_j) o X and a = det grad Y o X on the y-grid."""
    Y1, Y2 = np.meshgrid(np.asarray(y1, float), np.asarray(y2, float), indexing="ij")
    x1, x2 = invert_diffeo(m, Y1.ravel(), Y2.ravel())
    j11, j12, j21, j22 = m.jacobian(x1, x2)
    sh = Y1.shape
    a11 = (j11 * j11 + j12 * j12).reshape(sh)
    a12 = (j11 * j21 + j12 * j22).reshape(sh)
    a22 = (j21 * j21 + j22 * j22).reshape(sh)
    a = (j11 * j22 - j12 * j21).reshape(sh)
    # forward image of the strip |x2 - phi| < H: there chi = 1 and chi' = 0
    strip = (np.abs(Y2) < 0.5 * m.graph.H)
    return ConjugatedCoefficients(np.asarray(y1), np.asarray(y2), a11, a12, a22, a, strip)


def lipschitz_constant(f, h):
    gx = np.abs(np.diff(f, axis=0)).max() / h if f.shape[0] > 1 else 0.0
    gy = np.abs(np.diff(f, axis=1)).max() / h if f.shape[1] > 1 else 0.0
    return float(max(gx, gy))
