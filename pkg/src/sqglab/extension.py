"""Localization to balls and extension across a flattened boundary.

Fields near the boundary are pulled back to chart coordinates y with the
boundary at y2 = 0, sampled on a grid mirrored about that row, and extended
oddly (or evenly) to the plane. The extended operators L (divergence form) and
B (first order) then act on the plane grid, and the residuals of the
intertwining identities between the operators on the domain and on the plane
are measured under grid refinement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import splu

from . import kernels
from .geometry import (BoundaryGraph, DiffeoMap, GeometryError, dsigma, d2sigma, invert_diffeo,
                       sigma)
from .solver import SimConfig, SimState, holder_quotient, initial_field, solver_basis, step
from .spectral import (DomainSpec, GridField, QuadratureSpec, SpectralField, apply_dirichlet_power,
                       heat_semigroup)


class TraceError(ValueError):
    """Odd extension requested for data with a nonzero trace."""


class CoverError(GeometryError):
    pass


class IntertwineError(RuntimeError):
    pass


PARITIES = ("odd", "even", "none")


# ---------------------------------------------------------------- mirrored grids

@dataclass(frozen=True)
class MirrorGrid:
    """Nodes y = (i - n1, k - n2) h, so the row y2 = 0 is a grid row (index n2)."""
    h: float
    n1: int
    n2: int

    @classmethod
    def box(cls, half_width: float, h: float) -> "MirrorGrid":
        n = int(round(half_width / h))
        if n < 2:
            raise ValueError("box must hold at least two nodes per side")
        return cls(float(h), n, n)

    @property
    def shape(self):
        return (2 * self.n1 + 1, 2 * self.n2 + 1)

    @property
    def y1(self):
        return (np.arange(2 * self.n1 + 1) - self.n1) * self.h

    @property
    def y2(self):
        return (np.arange(2 * self.n2 + 1) - self.n2) * self.h

    @property
    def row0(self) -> int:
        return self.n2

    def mesh(self):
        return np.meshgrid(self.y1, self.y2, indexing="ij")

    def upper_mesh(self):
        return np.meshgrid(self.y1, self.y2[self.n2:], indexing="ij")


def odd(f_upper, tol: float = 1e-10) -> np.ndarray:
    """Odd mirror of samples on y2 >= 0 (column 0 is the row y2 = 0)."""
    f = np.asarray(f_upper, float)
    trace = f[:, 0]
    scale = max(1.0, float(np.abs(f).max())) if f.size else 1.0
    bad = np.abs(trace) > tol * scale
    if np.any(bad):
        raise TraceError(f"odd extension of data with trace up to {np.abs(trace).max():.3e} "
                         f"at {int(bad.sum())} nodes")
    f = f.copy()
    f[:, 0] = 0.0
    return np.concatenate([-f[:, :0:-1], f], axis=1)


def even(f_upper) -> np.ndarray:
    f = np.asarray(f_upper, float)
    return np.concatenate([f[:, :0:-1], f], axis=1)


@dataclass
class HalfSpaceField:
    values: np.ndarray
    grid: MirrorGrid
    parity: str = "none"

    def __post_init__(self):
        if self.parity not in PARITIES:
            raise ValueError(f"parity must be one of {PARITIES}")
        self.values = np.asarray(self.values, float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values {self.values.shape} do not match grid {self.grid.shape}")

    @property
    def upper(self):
        return self.values[:, self.grid.row0:]

    def parity_defect(self) -> float:
        """max over mirrored node pairs of the violation of the tagged parity."""
        if self.parity == "none":
            return 0.0
        sign = -1.0 if self.parity == "odd" else 1.0
        V = self.values
        d = float(np.abs(V - sign * V[:, ::-1]).max())
        if self.parity == "odd":
            d = max(d, float(np.abs(V[:, self.grid.row0]).max()))
        return d


def extend(f_upper, parity: str, grid: Optional[MirrorGrid] = None, tol: float = 1e-10) -> HalfSpaceField:
    f = np.asarray(f_upper, float)
    if grid is None:
        if f.shape[0] % 2 == 0:
            raise ValueError("need an odd number of nodes along y1")
        grid = MirrorGrid(1.0, f.shape[0] // 2, f.shape[1] - 1)
    if parity == "odd":
        return HalfSpaceField(odd(f, tol), grid, "odd")
    if parity == "even":
        return HalfSpaceField(even(f), grid, "even")
    raise ValueError("extend needs parity 'odd' or 'even'")


def d1(F, h):
    """Centered difference in y1, zero outside the array."""
    P = np.pad(np.asarray(F, float), ((1, 1), (0, 0)))
    return (P[2:] - P[:-2]) / (2 * h)


def d2(F, h):
    P = np.pad(np.asarray(F, float), ((0, 0), (1, 1)))
    return (P[:, 2:] - P[:, :-2]) / (2 * h)


def grad_perp(F, h):
    return -d2(F, h), d1(F, h)


# ---------------------------------------------------------------- cutoffs and covers

@dataclass(frozen=True)
class RadialCutoff:
    """chi = sigma((r_out - |x - c|) / (r_out - r_in)): 1 on the ball of radius
    r_in, 0 outside radius r_out."""
    center: tuple
    r_in: float
    r_out: float

    def _rho(self, x1, x2):
        return np.hypot(np.asarray(x1, float) - self.center[0], np.asarray(x2, float) - self.center[1])

    def __call__(self, x1, x2):
        w = self.r_out - self.r_in
        return sigma((self.r_out - self._rho(x1, x2)) / w)

    def derivatives(self, x1, x2):
        """(chi, d1 chi, d2 chi, Laplacian chi) at the points."""
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        w = self.r_out - self.r_in
        dx, dy = x1 - self.center[0], x2 - self.center[1]
        rho = np.hypot(dx, dy)
        s = (self.r_out - rho) / w
        ds, dds = dsigma(s), d2sigma(s)
        safe = np.where(rho > 0, rho, 1.0)
        # sigma' vanishes wherever rho < r_in, in particular at rho = 0
        g = np.where(rho > 0, -ds / (w * safe), 0.0)
        lap = dds / w ** 2 + np.where(rho > 0, -ds / (w * safe), 0.0)
        return sigma(s), g * dx, g * dy, lap


@dataclass
class Ball:
    center: tuple
    radii: tuple           # r^0 < ... < r^4, B^j has radius r^j
    kind: str              # boundary, corner or interior
    normal: Optional[tuple] = None    # inward unit normal for boundary balls

    def cutoff(self, j: int) -> RadialCutoff:
        if not 0 <= j <= 3:
            raise ValueError("cutoff index runs over 0..3")
        return RadialCutoff(tuple(self.center), self.radii[j], self.radii[j + 1])

    def contains(self, j, x1, x2):
        return np.hypot(x1 - self.center[0], x2 - self.center[1]) < self.radii[j]


def ball_radii(r: float):
    return tuple(r * (j + 2) / 5.0 for j in range(5))


@dataclass
class BallCover:
    balls: list
    r0: float
    domain: DomainSpec
    n_boundary: int
    report: dict = field(default_factory=dict)

    def cutoff(self, i: int, j: int) -> RadialCutoff:
        return self.balls[i].cutoff(j)

    def chart(self, i: int):
        b = self.balls[i]
        if b.kind == "boundary":
            return FlatChart(tuple(b.center), tuple(b.normal))
        return IdentityChart(tuple(b.center))

    def multiplicity(self, x1, x2, j: int = 0) -> np.ndarray:
        n = np.zeros(np.shape(x1), int)
        for b in self.balls:
            n += b.contains(j, x1, x2)
        return n


def _rect_nodes(domain: DomainSpec, h):
    nx = int(math.ceil(domain.lx / h))
    ny = int(math.ceil(domain.ly / h))
    x = np.linspace(0.0, domain.lx, nx + 1)
    y = np.linspace(0.0, domain.ly, ny + 1)
    return np.meshgrid(x, y, indexing="ij")


def build_cover(domain: DomainSpec, r0: float, h: Optional[float] = None, max_mult: int = 8) -> BallCover:
    """Boundary balls along the sides of a rectangle, then a greedy interior cover.

    Boundary balls have centres on the sides spaced 0.4 r0 apart; those within
    0.8 r0 of a corner are tagged 'corner' (their charts would cross a second
    side). Interior balls are placed greedily at the uncovered node farthest
    from the boundary with r^3 = min(r0, 0.95 d), so B^3 stays inside the domain.
    """
    if domain.kind != "rectangle":
        raise CoverError("ball covers are built for rectangles only")
    lx, ly = domain.lx, domain.ly
    if not 0 < r0 < 0.5 * min(lx, ly):
        raise CoverError("need 0 < r0 < half the shorter side")
    h = h or r0 / 10
    balls = []
    corners = np.array([[0, 0], [lx, 0], [lx, ly], [0, ly]], float)
    sides = [((0, 0), (1, 0), (0, 1), lx), ((lx, 0), (0, 1), (-1, 0), ly),
             ((lx, ly), (-1, 0), (0, -1), lx), ((0, ly), (0, -1), (1, 0), ly)]
    for start, tang, nrm, length in sides:
        n = int(math.ceil(length / (0.4 * r0)))
        for s in np.linspace(0.0, length, n + 1)[:-1]:
            c = np.array(start, float) + s * np.array(tang, float)
            near = np.min(np.hypot(*(corners - c).T)) < 0.8 * r0 - 1e-12
            balls.append(Ball(tuple(c), ball_radii(r0), "corner" if near else "boundary", tuple(map(float, nrm))))
    n_boundary = len(balls)
    X1, X2 = _rect_nodes(domain, h)
    dist = domain.boundary_distance(X1, X2)
    covered = np.zeros(X1.shape, bool)
    for b in balls:
        covered |= b.contains(0, X1, X2)
    while not covered.all():
        d = np.where(covered, -1.0, dist)
        k = np.unravel_index(int(np.argmax(d)), d.shape)
        c = (float(X1[k]), float(X2[k]))
        r3 = min(r0, 0.95 * float(dist[k]))
        if r3 < 0.5 * h:
            raise CoverError(f"{int((~covered).sum())} nodes left uncovered near the boundary, "
                             f"e.g. {c}; reduce the cover spacing")
        b = Ball(c, tuple(r3 * (j + 2) / 5.0 for j in range(5)), "interior")
        balls.append(b)
        covered |= b.contains(0, X1, X2)
    cover = BallCover(balls, r0, domain, n_boundary)
    mult = cover.multiplicity(X1, X2, 0)
    cover.report = {"n_balls": len(balls), "n_boundary": n_boundary,
                    "n_corner": sum(b.kind == "corner" for b in balls),
                    "max_multiplicity": int(mult.max()), "h": h}
    if mult.max() > max_mult:
        raise CoverError(f"node multiplicity {int(mult.max())} exceeds {max_mult}")
    return cover


# ---------------------------------------------------------------- charts

class IdentityChart:
    """Interior patch: no mirror, fields extended by zero."""
    mirrored = False

    def __init__(self, center=(0.0, 0.0)):
        self.center = tuple(map(float, center))

    def to_x(self, y1, y2):
        return self.center[0] + y1, self.center[1] + y2

    def pullback(self, y1, y2):
        x1, x2 = self.to_x(y1, y2)
        one, zero = np.ones_like(x1), np.zeros_like(x1)
        return x1, x2, (one, zero, one, one), (one, zero, zero, one)

    def is_identity(self):
        return True


class FlatChart(IdentityChart):
    """x = c + y1 t + y2 n for a straight boundary with inward normal n."""
    mirrored = True

    def __init__(self, center, normal):
        super().__init__(center)
        n = np.asarray(normal, float)
        n = n / np.linalg.norm(n)
        self.normal = tuple(n)
        self.tangent = (n[1], -n[0])

    def to_x(self, y1, y2):
        t, n = self.tangent, self.normal
        return (self.center[0] + y1 * t[0] + y2 * n[0], self.center[1] + y1 * t[1] + y2 * n[1])

    def pullback(self, y1, y2):
        x1, x2 = self.to_x(y1, y2)
        one, zero = np.ones_like(x1), np.zeros_like(x1)
        t, n = self.tangent, self.normal
        # grad X columns are t and n
        return x1, x2, (one, zero, one, one), (t[0] * one, n[0] * one, t[1] * one, n[1] * one)


class CurvedChart:
    """Chart from the boundary-flattening map: y = Y(x), boundary graph at y2 = 0."""
    mirrored = True

    def __init__(self, diffeo: DiffeoMap, center_x1: float = 0.0):
        self.m = diffeo
        self.center = (float(center_x1), float(diffeo.graph.phi(np.array([center_x1]))[0]))
        y = diffeo.Y(np.array([self.center[0]]), np.array([self.center[1]]))
        self.y0 = (float(y[0][0]), float(y[1][0]))

    def to_x(self, y1, y2):
        return invert_diffeo(self.m, np.asarray(y1) + self.y0[0], np.asarray(y2) + self.y0[1])

    def pullback(self, y1, y2):
        sh = np.shape(y1)
        x1, x2 = self.to_x(np.ravel(y1), np.ravel(y2))
        j11, j12, j21, j22 = self.m.jacobian(x1, x2)
        a11 = j11 * j11 + j12 * j12
        a12 = j11 * j21 + j12 * j22
        a22 = j21 * j21 + j22 * j22
        a = j11 * j22 - j12 * j21
        # grad X = (grad Y)^{-1}
        gx = (j22 / a, -j12 / a, -j21 / a, j11 / a)
        r = lambda v: np.reshape(v, sh)
        return r(x1), r(x2), tuple(map(r, (a11, a12, a22, a))), tuple(map(r, gx))

    def is_identity(self):
        return False


# ---------------------------------------------------------------- extended coefficients

@dataclass
class ExtendedCoefficients:
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    a: np.ndarray
    h: float
    identity: bool = False

    @property
    def c_min(self) -> float:
        tr = self.a11 + self.a22
        disc = np.sqrt(0.25 * (self.a11 - self.a22) ** 2 + self.a12 ** 2)
        return float(min(np.min(0.5 * tr - disc), np.min(self.a)))

    def lipschitz(self) -> float:
        out = 0.0
        for v in (self.a11, self.a12, self.a22, self.a):
            for ax in (0, 1):
                if v.shape[ax] > 1:
                    out = max(out, float(np.abs(np.diff(v, axis=ax)).max()) / self.h)
        return out

    def field(self) -> kernels.CoefficientField:
        return kernels.CoefficientField(self.a11, self.a12, self.a22, self.h)


def extended_operators(coeffs: ExtendedCoefficients):
    """(L, B): L = -d_i(a_ij d_j) in flux form with zero values outside the box,
    B f = (a_ij / a) (d_i a) (d_j f) with centered differences."""
    L = kernels.flux_operator(coeffs.a11, coeffs.a12, coeffs.a22, coeffs.h)
    h = coeffs.h
    if coeffs.identity:
        B = lambda f: np.zeros_like(np.asarray(f, float))
        return L, B
    ga1, ga2 = np.gradient(coeffs.a, h)
    b1 = (coeffs.a11 * ga1 + coeffs.a12 * ga2) / coeffs.a
    b2 = (coeffs.a12 * ga1 + coeffs.a22 * ga2) / coeffs.a

    def B(f):
        return b1 * d1(f, h) + b2 * d2(f, h)
    return L, B


def apply_L(L, f):
    f = np.asarray(f, float)
    return (L @ f.ravel()).reshape(f.shape)


# ---------------------------------------------------------------- patches and the map F

@dataclass
class Patch:
    chart: object
    grid: MirrorGrid
    cutoffs: list                      # RadialCutoff per level j
    x1: np.ndarray                     # X(y) on the sampled nodes (upper half when mirrored)
    x2: np.ndarray
    coeffs: ExtendedCoefficients
    gradX: tuple
    name: str = "patch"

    @property
    def mirrored(self) -> bool:
        return bool(self.chart.mirrored)

    @property
    def parity(self) -> str:
        return "odd" if self.mirrored else "none"

    def finish(self, upper, parity="odd", force: bool = False) -> np.ndarray:
        """Extend samples on the sampled nodes to the full grid. With ``force``
        the trace row is set to 0 before odd mirroring whatever its values."""
        if not self.mirrored:
            return np.asarray(upper, float)
        if parity != "odd":
            return even(upper)
        if force:
            upper = np.array(upper, float)
            upper[:, 0] = 0.0
        return odd(upper)

    def eta(self, j: int = 0) -> np.ndarray:
        """E(chi^j o X) on the full grid."""
        return self.finish(self.cutoffs[j](self.x1, self.x2), "even")


def make_patch(chart, radii: Sequence[float], h: float, half_width: float, name: str = "patch") -> Patch:
    """Grid, pulled-back nodes and extended coefficients for one chart.

    ``radii`` are r^0..r^J; cutoff j equals 1 on radius r^j and vanishes
    beyond r^{j+1}, centred at the chart centre.
    """
    grid = MirrorGrid.box(half_width, h)
    Y1, Y2 = grid.upper_mesh() if chart.mirrored else grid.mesh()
    x1, x2, (a11, a12, a22, a), gX = chart.pullback(Y1, Y2)
    if chart.mirrored:
        co = ExtendedCoefficients(even(a11), odd(a12, tol=1e-7), even(a22), even(a), grid.h,
                                  identity=chart.is_identity())
    else:
        co = ExtendedCoefficients(a11, a12, a22, a, grid.h, identity=chart.is_identity())
    if co.c_min <= 0:
        raise GeometryError("extended coefficients are not uniformly elliptic")
    cut = [RadialCutoff(chart.center, radii[j], radii[j + 1]) for j in range(len(radii) - 1)]
    return Patch(chart, grid, cut, x1, x2, co, gX, name)


def patch_from_cover(cover: BallCover, i: int, h: float, pad: float = 0.0) -> Patch:
    b = cover.balls[i]
    if b.kind == "corner":
        raise CoverError("corner balls have no flat chart")
    half = b.radii[-1] + pad
    half = h * math.ceil(half / h)
    return make_patch(cover.chart(i), b.radii, h, half, name=f"{b.kind}-{i}")


def sample(g, x1, x2):
    """Point values of g: a SpectralField (exact), GridField (bicubic), callable or None."""
    if g is None:
        return np.ones_like(np.asarray(x1, float))
    if isinstance(g, SpectralField):
        return g.basis.evaluate(g.coeffs, x1, x2)
    if isinstance(g, GridField):
        hx, hy = g.spacing
        c = ndimage.spline_filter(np.asarray(g.values, float), order=3, mode="constant")
        return ndimage.map_coordinates(c, [np.asarray(x1) / hx, np.asarray(x2) / hy], order=3,
                                       mode="constant", prefilter=False)
    return np.asarray(g(x1, x2), float)


def localize_extend(g, chi, patch: Patch, tol: float = 1e-8) -> HalfSpaceField:
    """F(g) = O((chi g) o X); interior patches extend by zero. ``chi`` is a cutoff,
    a cutoff index into the patch, or None for no cutoff."""
    if isinstance(chi, int):
        chi = patch.cutoffs[chi]
    v = sample(g, patch.x1, patch.x2)
    if chi is not None:
        v = chi(patch.x1, patch.x2) * v
    if not patch.mirrored:
        return HalfSpaceField(v, patch.grid, "none")
    return HalfSpaceField(odd(v, tol), patch.grid, "odd")


# ---------------------------------------------------------------- smooth test data

@dataclass
class SmoothFunction:
    """f with first derivatives and Laplacian as callables of (x1, x2)."""
    f: Callable
    fx: Callable
    fy: Callable
    lap: Callable

    def __call__(self, x1, x2):
        return self.f(x1, x2)

    def derivatives(self, x1, x2):
        return self.f(x1, x2), self.fx(x1, x2), self.fy(x1, x2), self.lap(x1, x2)


def graph_test_function(graph: BoundaryGraph, k: float = 2.0) -> SmoothFunction:
    """g = (x2 - phi(x1)) cos(k x1) e^{x2}, zero on the boundary graph."""
    p, dp, ddp = graph.phi, graph.dphi, graph.ddphi

    def parts(x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        d = x2 - p(x1)
        q = np.cos(k * x1) * np.exp(x2)
        qx = -k * np.sin(k * x1) * np.exp(x2)
        return d, q, qx
    f = lambda x1, x2: parts(x1, x2)[0] * parts(x1, x2)[1]

    def fx(x1, x2):
        d, q, qx = parts(x1, x2)
        return -dp(np.asarray(x1, float)) * q + d * qx

    def fy(x1, x2):
        d, q, _ = parts(x1, x2)
        return q + d * q

    def lap(x1, x2):
        d, q, qx = parts(x1, x2)
        x1 = np.asarray(x1, float)
        # d_xx: -phi'' q - 2 phi' q_x - d k^2 q ; d_yy: 2 q + d q
        return (-ddp(x1) * q - 2 * dp(x1) * qx - d * k * k * q) + (2 * q + d * q)
    return SmoothFunction(f, fx, fy, lap)


def _derivs(g, x1, x2):
    if isinstance(g, SpectralField):
        f, fx, fy, fxx, _, fyy = g.basis.evaluate_derivatives(g.coeffs, x1, x2)
        sh = np.shape(x1)
        return tuple(np.reshape(v, sh) for v in (f, fx, fy, fxx + fyy))
    if hasattr(g, "derivatives"):
        return g.derivatives(x1, x2)
    raise TypeError("exact derivatives need a SpectralField or a SmoothFunction")


def _product_derivs(chi: RadialCutoff, g, x1, x2):
    c, cx, cy, cl = chi.derivatives(x1, x2)
    f, fx, fy, fl = _derivs(g, x1, x2)
    return c * f, cx * f + c * fx, cy * f + c * fy, cl * f + 2 * (cx * fx + cy * fy) + c * fl


# ---------------------------------------------------------------- plane operators

def plane_heat(coeffs: ExtendedCoefficients, f, t: float, dt: Optional[float] = None, L=None):
    """e^{-tL} f by Crank-Nicolson with dt = t / ceil(t / h).

    The first two steps are replaced by four backward Euler half steps so that
    grid-scale modes are damped (plain CN maps them to nearly -1 per step).
    """
    f = np.asarray(f, float)
    if t <= 0:
        return f.copy()
    n = max(2, int(math.ceil(t / (dt or coeffs.h))))
    tau = t / n
    L = kernels.flux_operator(coeffs.a11, coeffs.a12, coeffs.a22, coeffs.h) if L is None else L
    I = sparse.identity(L.shape[0], format="csc")
    be = splu((I + 0.5 * tau * L).tocsc())
    v = f.ravel()
    for _ in range(4):
        v = be.solve(v)
    if n > 2:
        M = (I - 0.5 * tau * L).tocsr()
        for _ in range(n - 2):
            v = be.solve(M @ v)
    return v.reshape(f.shape)


def plane_sqrt(coeffs: ExtendedCoefficients, f):
    """L^{1/2} f on the plane (f zero outside the box)."""
    if coeffs.identity:
        return kernels.sqrt_const(np.eye(2), f, coeffs.h)
    return kernels.sqrt_variable(coeffs.field(), f)[0]


def plane_inverse_sqrt(coeffs: ExtendedCoefficients, f, max_dense: int = 4096):
    """L^{-1/2} f: the whole-plane kernel for identity coefficients, otherwise the
    spectral inverse root of the Dirichlet box operator, which equals the
    subordination integral (1/Gamma(1/2)) int t^{-1/2} e^{-tL} f dt."""
    if coeffs.identity:
        return kernels.inverse_sqrt_identity(f, coeffs.h)
    f = np.asarray(f, float)
    if f.size > max_dense:
        raise ValueError(f"variable-coefficient L^(-1/2) limited to {max_dense} nodes")
    L = kernels.flux_operator(coeffs.a11, coeffs.a12, coeffs.a22, coeffs.h).toarray()
    lam, V = np.linalg.eigh(L)
    return (V @ ((V.T @ f.ravel()) / np.sqrt(lam))).reshape(f.shape)


def cr_estimate(F, h: float, r: float, n_scales: int = 10, n_dirs: int = 4) -> float:
    """||F||_inf + [F]_{C^r}, the seminorm from difference quotients at
    geometrically spaced displacements."""
    F = np.asarray(F, float)
    n = min(F.shape)
    mags = np.unique(np.rint(np.geomspace(1, max(1, n // 4), n_scales)).astype(int))
    offs = set()
    for m in mags:
        for a in np.arange(n_dirs) * np.pi / n_dirs:
            di, dj = int(round(m * np.cos(a))), int(round(m * np.sin(a)))
            if (di, dj) != (0, 0):
                offs.add((di, dj))
    o = np.array(sorted(offs), np.int64)
    semi, _, _ = holder_quotient(F, (h, h), np.ones(F.shape, bool), o, r)
    return float(np.abs(F).max()) + semi


# ---------------------------------------------------------------- intertwining residuals

@dataclass
class IntertwineResidual:
    mode: str
    field: np.ndarray
    h: float
    linf: float
    l2: float
    cr: float
    order: Optional[float] = None
    levels: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"mode": self.mode, "h": self.h, "linf": self.linf, "l2": self.l2, "cr": self.cr,
                "order": self.order, "levels": self.levels, "extra": self.extra}


def _report(mode, R, h, r=0.5, **extra):
    R = np.asarray(R, float)
    return IntertwineResidual(mode, R, h, float(np.abs(R).max()), float(h * np.linalg.norm(R)),
                              cr_estimate(R, h, r), extra=extra)


def _laplacian(theta, patch: Patch, cutoff: int = 0):
    chi = patch.cutoffs[cutoff]
    _, _, _, lap = _product_derivs(chi, theta, patch.x1, patch.x2)
    # Delta(chi g) need not vanish on the boundary; its odd extension is 0 on the trace row
    lhs = patch.finish(-lap, force=True)
    Fg = localize_extend(theta, chi, patch).values
    L, B = extended_operators(patch.coeffs)
    return lhs - (apply_L(L, Fg) + B(Fg))


def _heat(theta, patch, times, cutoff=0, r=0.0, beta=0.0):
    chi = patch.cutoffs[cutoff]
    F0 = localize_extend(theta, chi, patch).values
    L = kernels.flux_operator(patch.coeffs.a11, patch.coeffs.a12, patch.coeffs.a22, patch.coeffs.h)
    out, prof = None, []
    prev_t, v = 0.0, F0
    for t in sorted(times):
        v = plane_heat(patch.coeffs, v, t - prev_t, L=L)
        prev_t = t
        R = localize_extend(heat_semigroup(theta, t), chi, patch).values - v
        shape = min(t, 1.0) ** ((r + 1 - beta) / 2) * math.log(2 + t) / (t + 1)
        prof.append({"t": t, "linf": float(np.abs(R).max()), "shape": shape,
                     "ratio": float(np.abs(R).max()) / shape})
        out = R
    return out, prof


def _lambda(theta, patch, cutoff=0):
    chi = patch.cutoffs[cutoff]
    lam = apply_dirichlet_power(theta, 1.0)
    return (localize_extend(lam, chi, patch).values
            - plane_sqrt(patch.coeffs, localize_extend(theta, chi, patch).values))


def _stream(theta, patch, cutoff=0):
    chi = patch.cutoffs[cutoff]
    inv = apply_dirichlet_power(theta, -1.0)
    return (localize_extend(inv, chi, patch).values
            - plane_inverse_sqrt(patch.coeffs, localize_extend(theta, chi, patch).values))


def intertwine_residual(mode: str, theta, patch: Patch, *, cutoff: int = 0, times=None,
                        r: float = 0.5) -> IntertwineResidual:
    """Residual of one intertwining identity on a patch.

    laplacian: F(-Delta(chi g)) - (L + B) F(chi g), exact derivatives on the left;
    heat:      F(chi e^{t Delta} theta) - e^{-tL} F(chi theta) at each of ``times``;
    lambda:    F(chi Lambda theta) - L^{1/2} F(chi theta);
    stream:    F(chi Lambda^{-1} theta) - L^{-1/2} F(chi theta).
    """
    h = patch.grid.h
    try:
        if mode == "laplacian":
            return _report(mode, _laplacian(theta, patch, cutoff), h, r)
        if mode == "heat":
            if times is None:
                mu1 = float(theta.basis.mu[0])
                times = [0.01, 0.03, 0.1, 0.3, 1.0, 10 / math.sqrt(mu1)]
            R, prof = _heat(theta, patch, times, cutoff)
            rep = _report(mode, R, h, r, profile=prof)
            return rep
        if mode == "lambda":
            return _report(mode, _lambda(theta, patch, cutoff), h, r)
        if mode == "stream":
            return _report(mode, _stream(theta, patch, cutoff), h, r)
    except (TraceError, GeometryError, kernels.RefinementError, ValueError, RuntimeError) as err:
        raise IntertwineError(f"{mode}: {err}") from err
    raise ValueError(f"unknown mode {mode!r}")


def measured_orders(hs, errs):
    hs, errs = np.asarray(hs, float), np.asarray(errs, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return list(np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:]))


def intertwine_order(mode: str, theta, patch_at: Callable, hs: Sequence[float], norm: str = "linf",
                     **kw) -> IntertwineResidual:
    """Residuals at each h (patch_at(h) builds the patch); the finest report
    carries the per-level norms and the smallest measured order."""
    reps = [intertwine_residual(mode, theta, patch_at(h), **kw) for h in hs]
    errs = [getattr(x, norm) for x in reps]
    orders = measured_orders(hs, errs)
    out = reps[-1]
    out.levels = [{"h": float(h), "linf": x.linf, "l2": x.l2, "cr": x.cr} for h, x in zip(hs, reps)]
    for lv, x in zip(out.levels, reps):
        if "profile" in x.extra:
            lv["profile_max"] = max(q["ratio"] for q in x.extra["profile"])
    out.order = float(np.min(orders)) if orders else None
    out.extra["orders"] = [float(o) for o in orders]
    return out


# ---------------------------------------------------------------- Poisson brackets

def _bracket_derivs(chi1, psi, chi, theta, x1, x2):
    _, ax, ay, _ = _product_derivs(chi1, psi, x1, x2)
    _, bx, by, _ = _product_derivs(chi, theta, x1, x2)
    return -ay * bx + ax * by


def poisson_bracket_check(psi, theta, patch: Patch, chi1: int = 1, chi: int = 0) -> IntertwineResidual:
    """F({chi1 psi, chi theta}) - a {F(chi1 psi), F(chi theta)}, with
    {p, q} = grad^perp p . grad q; exact derivatives on the left, centered
    differences on the right."""
    c1, c0 = patch.cutoffs[chi1], patch.cutoffs[chi]
    lhs = patch.finish(_bracket_derivs(c1, psi, c0, theta, patch.x1, patch.x2))
    P = localize_extend(psi, c1, patch).values
    Q = localize_extend(theta, c0, patch).values
    h = patch.grid.h
    px, py = d1(P, h), d2(P, h)
    qx, qy = d1(Q, h), d2(Q, h)
    rhs = patch.coeffs.a * (-py * qx + px * qy)
    return _report("bracket", lhs - rhs, h)


def composition_rule_check(f: SmoothFunction, g: SmoothFunction, patch: Patch) -> float:
    """max |{f o X, g o X}_y - det(grad X) ({f, g} o X)| over the sampled nodes
    away from the grid edge; centered differences in y."""
    x1, x2 = patch.x1, patch.x2
    h = patch.grid.h
    F, G = f(x1, x2), g(x1, x2)
    _, fx, fy, _ = f.derivatives(x1, x2)
    _, gx, gy, _ = g.derivatives(x1, x2)
    exact = (-fy * gx + fx * gy)
    detX = patch.gradX[0] * patch.gradX[3] - patch.gradX[1] * patch.gradX[2]
    Fx, Fy = np.gradient(F, h)
    Gx, Gy = np.gradient(G, h)
    lhs = -Fy * Gx + Fx * Gy
    d = np.abs(lhs - detX * exact)[1:-1, 1:-1]
    return float(d.max())


# ---------------------------------------------------------------- extended system

@dataclass
class SystemSnapshot:
    theta_i: np.ndarray
    theta_tilde: np.ndarray
    u: tuple
    u_re: tuple
    gamma_tilde: tuple
    forcing: np.ndarray
    residual: np.ndarray
    eta_defect: float
    h: float

    @property
    def linf(self):
        return float(np.abs(self.residual).max())


def system_snapshot(prev: SpectralField, now: SpectralField, nxt: SpectralField, dt: float,
                    patch: Patch) -> SystemSnapshot:
    """Residual of d_t theta_i + u_i . grad theta_i + L^{1/2} theta_i - f_i at
    the middle time level, with
      theta_i = F(chi^0 theta), theta~_i = F(chi^1 theta),
      u_i = a grad^perp (L^{-1/2} theta~_i + S),  S = F(chi^1 Lambda^{-1} theta) - L^{-1/2} theta~_i,
      f_i = -R_chi + u_i . gamma~,  gamma~ = O(theta o X) grad E(chi^0 o X),
      R_chi = F(chi^0 Lambda theta) - L^{1/2} theta_i.
    """
    h = patch.grid.h
    co = patch.coeffs
    th = localize_extend(now, 0, patch).values
    tt = localize_extend(now, 1, patch).values
    eta = patch.eta(0)
    eta_defect = float(np.abs(th - eta * tt).max())
    dth = (localize_extend(nxt, 0, patch).values - localize_extend(prev, 0, patch).values) / (2 * dt)
    psi1 = localize_extend(apply_dirichlet_power(now, -1.0), 1, patch).values
    base = plane_inverse_sqrt(co, tt)
    S = psi1 - base
    ux, uy = grad_perp(base + S, h)
    rx, ry = grad_perp(S, h)
    u = (co.a * ux, co.a * uy)
    u_re = (co.a * rx, co.a * ry)
    theta_x = localize_extend(now, None, patch).values
    gam = (theta_x * d1(eta, h), theta_x * d2(eta, h))
    sq = plane_sqrt(co, th)
    R = localize_extend(apply_dirichlet_power(now, 1.0), 0, patch).values - sq
    f = -R + u[0] * gam[0] + u[1] * gam[1]
    res = dth + u[0] * d1(th, h) + u[1] * d2(th, h) + sq - f
    return SystemSnapshot(th, tt, u, u_re, gam, f, res, eta_defect, h)


def collect_steps(cfg: SimConfig, times: Sequence[float], theta0: Optional[SpectralField] = None):
    """Spectral fields at steps n-1, n, n+1 for each requested time t ~ n dt."""
    basis = solver_basis(cfg)
    th0 = theta0 if theta0 is not None else initial_field(basis, cfg.initial, cfg.seed)
    if th0.basis is not basis:
        th0 = SpectralField(np.asarray(th0.coeffs, float), basis)
    centers = sorted({max(1, int(round(t / cfg.dt))) for t in times})
    wanted = {k + d for k in centers for d in (-1, 0, 1)}
    keep = {}
    state = SimState(th0)
    if 0 in wanted:
        keep[0] = th0
    for n in range(1, max(wanted) + 1):
        state = step(state, cfg, basis)
        if state.blown_up:
            raise FloatingPointError(f"solver produced non-finite values at step {n}")
        if n in wanted:
            keep[n] = state.theta
    return [(keep[k - 1], keep[k], keep[k + 1]) for k in centers], basis


@dataclass
class SystemReport:
    patches: list
    levels: list            # (h, dt)
    norms: dict             # patch name -> residual norm per level
    orders: dict            # patch name -> min measured order
    eta_defect: float
    snapshots: dict = field(default_factory=dict)

    def to_dict(self):
        return {"levels": [list(map(float, x)) for x in self.levels], "norms": self.norms,
                "orders": self.orders, "eta_defect": self.eta_defect, "patches": self.patches}


def assemble_extended_system(cfg: SimConfig, patch_specs: Sequence[tuple],
                             levels=((0.02, 2e-3), (0.01, 1e-3), (0.005, 5e-4)),
                             times=(0.02, 0.04), theta0_spec: Optional[dict] = None) -> SystemReport:
    """Extended-system residuals under simultaneous (h, dt) refinement.

    ``patch_specs`` holds (name, chart, radii, half_width). The trajectory is
    recomputed at each dt from the same initial data; the residual norm at a
    level is the max over ``times`` of the grid max norm.
    """
    norms = {name: [] for name, *_ in patch_specs}
    eta_def = 0.0
    snaps = {}
    for h, dt in levels:
        c = SimConfig(domain=cfg.domain, n_modes=cfg.n_modes, dt=dt, t_end=max(times) + 2 * dt,
                      dealias=cfg.dealias, initial=theta0_spec or cfg.initial, nonlinear=cfg.nonlinear,
                      cfl=cfg.cfl, seed=cfg.seed)
        triples, _ = collect_steps(c, times)
        for name, chart, radii, half in patch_specs:
            patch = make_patch(chart, radii, h, half, name)
            worst = 0.0
            for prev, now, nxt in triples:
                s = system_snapshot(prev, now, nxt, dt, patch)
                worst = max(worst, s.linf)
                eta_def = max(eta_def, s.eta_defect)
                snaps[name] = s
            norms[name].append(worst)
    hs = [h for h, _ in levels]
    orders = {k: float(np.min(measured_orders(hs, v))) for k, v in norms.items()}
    return SystemReport([p[0] for p in patch_specs], list(levels), norms, orders, eta_def, snaps)


def default_system_patches(domain: DomainSpec):
    """An interior patch at the centre and a boundary patch at the middle of the
    bottom side, radii (0.15, 0.3, 0.45) scaled to the domain."""
    lx, ly = domain.lx, domain.ly
    s = min(lx, ly)
    radii = (0.15 * s, 0.3 * s, 0.45 * s)
    return [("interior", IdentityChart((lx / 2, ly / 2)), radii, 0.5 * s),
            ("boundary", FlatChart((lx / 2, 0.0), (0.0, 1.0)), radii, 0.5 * s)]


def remainder_velocity_constant(basis, patch: Patch, n_fields: int = 10, r: float = 0.5,
                                seed: int = 0) -> np.ndarray:
    """||u_re||_{C^r} / ||theta||_inf for random span fields (one ratio per field)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_fields):
        th = initial_field(basis, {"kind": "random", "n_low": 12}, int(rng.integers(1 << 30)))
        tt = localize_extend(th, 1, patch).values
        psi1 = localize_extend(apply_dirichlet_power(th, -1.0), 1, patch).values
        S = psi1 - plane_inverse_sqrt(patch.coeffs, tt)
        rx, ry = grad_perp(S, patch.grid.h)
        a = patch.coeffs.a
        cr = max(cr_estimate(a * rx, patch.grid.h, r), cr_estimate(a * ry, patch.grid.h, r))
        out.append(cr / float(np.abs(basis.synthesize(th.coeffs)).max()))
    return np.array(out)


def patch_norms(theta: SpectralField, cover: BallCover, h: float):
    """max over patches of ||F(chi_i^0 theta)||_inf, and ||theta||_inf on the nodes."""
    best = 0.0
    for i, b in enumerate(cover.balls):
        chart = cover.chart(i) if b.kind != "corner" else IdentityChart(b.center)
        half = h * math.ceil(b.radii[1] / h)
        p = make_patch(chart, b.radii, h, half, name=str(i))
        best = max(best, float(np.abs(localize_extend(theta, 0, p).values).max()))
    return best
