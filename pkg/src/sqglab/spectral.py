"""Dirichlet-Laplacian eigenbasis and the fractional functional calculus built on it.

Two domain kinds are supported. A rectangle uses the closed-form sine products,
sampled on a uniform grid whose interior nodes make the discrete inner product
exact. A discretized domain is a boolean node mask; its eigenpairs come from the
5-point finite-difference Dirichlet Laplacian.

Grid fields always carry the boundary layer: for a rectangle the sample array has
shape (nx + 2, ny + 2) and the outer rows/columns are the boundary nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.special import gamma as gamma_fn

ORTHO_TOL_RECT = 1e-10
ORTHO_TOL_DISC = 1e-8
CLUSTER_GAP = 1e-8


class EigenSolveError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


# ---------------------------------------------------------------- domains

@dataclass(frozen=True)
class DomainSpec:
    kind: str
    lx: float = 1.0
    ly: float = 1.0
    mask: Optional[np.ndarray] = None
    h: Optional[float] = None
    origin: tuple = (0.0, 0.0)
    distance: Optional[Callable] = None

    def __post_init__(self):
        if self.kind == "rectangle":
            if not (self.lx > 0 and self.ly > 0):
                raise ValueError("rectangle side lengths must be positive")
        elif self.kind == "discretized":
            m = self.mask
            if m is None or self.h is None or self.h <= 0:
                raise ValueError("discretized domain needs a mask and a positive spacing")
            m = np.asarray(m, dtype=bool)
            if m.ndim != 2 or not m.any():
                raise ValueError("mask must be a nonempty 2D boolean array")
            if m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any():
                raise ValueError("mask must leave a boundary layer of exterior nodes")
            _, ncomp = ndimage.label(m)
            if ncomp != 1:
                raise ValueError("interior node set must be connected")
            object.__setattr__(self, "mask", m)
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @property
    def diameter(self) -> float:
        if self.kind == "rectangle":
            return float(np.hypot(self.lx, self.ly))
        i, j = np.nonzero(self.mask)
        return float(self.h * np.hypot(i.ptp() + 2, j.ptp() + 2))

    def boundary_distance(self, x, y):
        """Distance to the boundary for points of the domain."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if self.distance is not None:
            return self.distance(x, y)
        if self.kind == "rectangle":
            return np.minimum(np.minimum(x, self.lx - x), np.minimum(y, self.ly - y))
        # distance to the nearest exterior node, the discrete Dirichlet boundary
        d = ndimage.distance_transform_edt(self.mask) * self.h
        ix = np.rint((x - self.origin[0]) / self.h).astype(int)
        iy = np.rint((y - self.origin[1]) / self.h).astype(int)
        return d[ix, iy]


def rectangle(lx: float = 1.0, ly: float = 1.0) -> DomainSpec:
    return DomainSpec("rectangle", lx=lx, ly=ly)


def discretized(mask, h: float, origin=(0.0, 0.0), distance=None) -> DomainSpec:
    return DomainSpec("discretized", mask=np.asarray(mask, bool), h=h, origin=tuple(origin),
                      distance=distance)


def disk(radius: float, h: float) -> DomainSpec:
    """Disk of given radius centred at the origin, sampled with spacing h."""
    n = int(np.ceil(radius / h)) + 2
    ax = np.arange(-n, n + 1) * h
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    mask = X ** 2 + Y ** 2 < radius ** 2
    return discretized(mask, h, origin=(ax[0], ax[0]),
                       distance=lambda x, y: radius - np.hypot(x, y))


# ---------------------------------------------------------------- fields

@dataclass
class GridField:
    values: np.ndarray
    spacing: tuple
    dirichlet: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid field has non-finite values")

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass
class SpectralField:
    coeffs: np.ndarray
    basis: "EigenBasis"

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, float)
        if self.coeffs.shape != (self.basis.n_modes,):
            raise ValueError(f"expected {self.basis.n_modes} coefficients, got {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("spectral field has non-finite coefficients")

    def __add__(self, other):
        return SpectralField(self.coeffs + other.coeffs, self.basis)

    def __sub__(self, other):
        return SpectralField(self.coeffs - other.coeffs, self.basis)

    def __mul__(self, a):
        return SpectralField(self.coeffs * a, self.basis)

    __rmul__ = __mul__

    def l2(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def grid(self) -> np.ndarray:
        return self.basis.synthesize(self.coeffs)


# ---------------------------------------------------------------- basis

def _dst_grid(C):
    # sum_{m,n} C[m-1,n-1] sin(m pi i/(nx+1)) sin(n pi k/(ny+1)) on interior nodes
    return sfft.dstn(C, type=1) / 4.0


def _cos_sin_grid(C, axis):
    """Sum with cos along `axis` (all nodes incl. boundary) and sin along the other (interior)."""
    if axis == 0:
        P = np.pad(C, ((1, 1), (0, 0)))
        A = sfft.dct(P, type=1, axis=0) / 2.0
        A = sfft.dst(A, type=1, axis=1) / 2.0
        return np.pad(A, ((0, 0), (1, 1)))
    P = np.pad(C, ((0, 0), (1, 1)))
    A = sfft.dct(P, type=1, axis=1) / 2.0
    A = sfft.dst(A, type=1, axis=0) / 2.0
    return np.pad(A, ((1, 1), (0, 0)))


class EigenBasis:
    """Eigenpairs (w_j, mu_j) of -Delta_D, ordered by nondecreasing mu.

    Grid samples of w_j and its gradient are produced on demand (``mode``) or in
    bulk through the transforms ``synthesize``/``analyze``/``gradient``.
    """

    def __init__(self, domain: DomainSpec, mu, *, m_idx=None, n_idx=None, grid_shape=None,
                 vectors=None):
        self.domain = domain
        self.mu = np.asarray(mu, float)
        self.n_modes = self.mu.size
        if domain.kind == "rectangle":
            self.m_idx = np.asarray(m_idx, int)
            self.n_idx = np.asarray(n_idx, int)
            self.nx, self.ny = grid_shape
            self.hx = domain.lx / (self.nx + 1)
            self.hy = domain.ly / (self.ny + 1)
            self._norm = 2.0 / np.sqrt(domain.lx * domain.ly)
        else:
            self.vectors = vectors
            self.mask = domain.mask
            self.hx = self.hy = domain.h
        self.weight = self.hx * self.hy

    # -- geometry
    @property
    def shape(self):
        if self.domain.kind == "rectangle":
            return (self.nx + 2, self.ny + 2)
        return self.mask.shape

    @property
    def spacing(self):
        return (self.hx, self.hy)

    def coords(self):
        if self.domain.kind == "rectangle":
            x = np.arange(self.nx + 2) * self.hx
            y = np.arange(self.ny + 2) * self.hy
        else:
            x = self.domain.origin[0] + np.arange(self.shape[0]) * self.hx
            y = self.domain.origin[1] + np.arange(self.shape[1]) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def interior_mask(self):
        if self.domain.kind == "rectangle":
            m = np.zeros(self.shape, bool)
            m[1:-1, 1:-1] = True
            return m
        return self.mask

    def boundary_mask(self):
        """Boundary sample nodes: exterior nodes adjacent to the interior."""
        if self.domain.kind == "rectangle":
            m = np.ones(self.shape, bool)
            m[1:-1, 1:-1] = False
            return m
        dil = ndimage.binary_dilation(self.mask, structure=np.ones((3, 3), bool))
        return dil & ~self.mask

    # -- transforms
    def _to_box(self, c):
        C = np.zeros((self.nx, self.ny))
        C[self.m_idx - 1, self.n_idx - 1] = c
        return C

    def _from_box(self, C):
        return C[self.m_idx - 1, self.n_idx - 1]

    def synthesize(self, c) -> np.ndarray:
        c = np.asarray(c, float)
        out = np.zeros(self.shape)
        if self.domain.kind == "rectangle":
            out[1:-1, 1:-1] = self._norm * _dst_grid(self._to_box(c))
        else:
            out[self.mask] = self.vectors @ c
        return out

    def analyze(self, f) -> np.ndarray:
        f = np.asarray(f, float)
        if f.shape != self.shape:
            raise ValueError(f"grid mismatch: field {f.shape}, basis {self.shape}")
        if self.domain.kind == "rectangle":
            C = self.weight * self._norm * _dst_grid(f[1:-1, 1:-1])
            return self._from_box(C)
        return self.weight * (self.vectors.T @ f[self.mask])

    def gradient(self, c):
        """Grid samples of (d/dx, d/dy) of sum c_j w_j."""
        c = np.asarray(c, float)
        if self.domain.kind == "rectangle":
            kx = np.pi * self.m_idx / self.domain.lx
            ky = np.pi * self.n_idx / self.domain.ly
            gx = self._norm * _cos_sin_grid(self._to_box(c * kx), 0)
            gy = self._norm * _cos_sin_grid(self._to_box(c * ky), 1)
            return gx, gy
        return centered_gradient(self.synthesize(c), self.hx, self.hy)

    def mode(self, j: int):
        """Samples (w_j, d_x w_j, d_y w_j) of mode j (0-based)."""
        e = np.zeros(self.n_modes)
        e[j] = 1.0
        gx, gy = self.gradient(e)
        return self.synthesize(e), gx, gy

    def evaluate(self, c, x, y):
        """Point values of sum c_j w_j (exact for rectangles, bilinear otherwise)."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if self.domain.kind == "rectangle":
            sx = np.sin(np.pi * np.outer(x.ravel(), np.arange(1, self.nx + 1)) / self.domain.lx)
            sy = np.sin(np.pi * np.outer(y.ravel(), np.arange(1, self.ny + 1)) / self.domain.ly)
            C = self._to_box(np.asarray(c, float))
            vals = np.einsum("pm,mn,pn->p", sx, C, sy, optimize=True) * self._norm
            inside = (x.ravel() >= 0) & (x.ravel() <= self.domain.lx) & \
                (y.ravel() >= 0) & (y.ravel() <= self.domain.ly)
            return np.where(inside, vals, 0.0).reshape(x.shape)
        g = self.synthesize(c)
        X, Y = self.coords()
        fi = (x - X[0, 0]) / self.hx
        fj = (y - Y[0, 0]) / self.hy
        return ndimage.map_coordinates(g, [fi, fj], order=1, mode="constant")

    def evaluate_derivatives(self, c, x, y):
        """Exact point values (f, f_x, f_y, f_xx, f_xy, f_yy) for rectangle bases."""
        if self.domain.kind != "rectangle":
            raise NotImplementedError("exact point derivatives need a rectangle basis")
        x = np.asarray(x, float).ravel()
        y = np.asarray(y, float).ravel()
        kx = np.pi * np.arange(1, self.nx + 1) / self.domain.lx
        ky = np.pi * np.arange(1, self.ny + 1) / self.domain.ly
        sx, cx = np.sin(np.outer(x, kx)), np.cos(np.outer(x, kx))
        sy, cy = np.sin(np.outer(y, ky)), np.cos(np.outer(y, ky))
        C = self._to_box(np.asarray(c, float)) * self._norm
        ev = lambda A, B, W: np.einsum("pm,mn,pn->p", A, W, B, optimize=True)
        out = (ev(sx, sy, C), ev(cx, sy, C * kx[:, None]), ev(sx, cy, C * ky[None, :]),
               -ev(sx, sy, C * (kx ** 2)[:, None]), ev(cx, cy, C * np.outer(kx, ky)),
               -ev(sx, sy, C * (ky ** 2)[None, :]))
        return out

    def gram(self) -> np.ndarray:
        """Discrete Gram matrix of the stored modes (for invariant checks)."""
        if self.domain.kind == "rectangle":
            if self.n_modes > 2000:
                raise ValueError("Gram matrix check limited to 2000 modes")
            W = np.stack([self.synthesize(e).ravel() for e in np.eye(self.n_modes)])
        else:
            W = self.vectors.T
        return self.weight * W @ W.T

    # -- cache file payload
    def to_arrays(self):
        if self.domain.kind == "rectangle":
            return {"mu": self.mu, "m_idx": self.m_idx.astype(float), "n_idx": self.n_idx.astype(float)}
        return {"mu": self.mu, "vectors": self.vectors, "mask": self.mask.astype(float)}


def centered_gradient(f, hx, hy):
    """Centered differences with zero extension outside the array."""
    P = np.pad(f, 1)
    gx = (P[2:, 1:-1] - P[:-2, 1:-1]) / (2 * hx)
    gy = (P[1:-1, 2:] - P[1:-1, :-2]) / (2 * hy)
    return gx, gy


def _rect_modes(domain, n_modes):
    lx, ly = domain.lx, domain.ly
    if isinstance(n_modes, (tuple, list)):
        M, N = n_modes
        m, n = np.meshgrid(np.arange(1, M + 1), np.arange(1, N + 1), indexing="ij")
        m, n = m.ravel(), n.ravel()
    else:
        k = int(np.ceil(np.sqrt(n_modes))) + 1
        while True:
            m, n = np.meshgrid(np.arange(1, k + 1), np.arange(1, k + 1), indexing="ij")
            m, n = m.ravel(), n.ravel()
            mu = np.pi ** 2 * (m ** 2 / lx ** 2 + n ** 2 / ly ** 2)
            edge = np.pi ** 2 * min((k + 1) ** 2 / lx ** 2 + 1 / ly ** 2, 1 / lx ** 2 + (k + 1) ** 2 / ly ** 2)
            if np.sort(mu)[n_modes - 1] < edge:
                break
            k *= 2
    mu = np.pi ** 2 * (m ** 2 / lx ** 2 + n ** 2 / ly ** 2)
    order = np.lexsort((n, m, mu))
    if not isinstance(n_modes, (tuple, list)):
        order = order[:n_modes]
    return mu[order], m[order], n[order]


def _orthonormalize_clusters(mu, V, weight):
    """Re-orthonormalize eigenvectors inside clusters of numerically equal eigenvalues."""
    start = 0
    n = mu.size
    while start < n:
        stop = start + 1
        while stop < n and (mu[stop] - mu[stop - 1]) <= CLUSTER_GAP * abs(mu[stop]):
            stop += 1
        if stop - start > 1:
            Q, _ = np.linalg.qr(V[:, start:stop])
            V[:, start:stop] = Q / np.sqrt(weight)
        start = stop
    return V


def dirichlet_matrix(mask, h):
    """5-point -Delta_h on the interior nodes of mask (zero outside)."""
    idx = -np.ones(mask.shape, int)
    idx[mask] = np.arange(mask.sum())
    rows, cols, vals = [], [], []
    I, J = np.nonzero(mask)
    n = I.size
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(np.full(n, 4.0 / h ** 2))
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = idx[I + di, J + dj]
        ok = nb >= 0
        rows.append(np.arange(n)[ok])
        cols.append(nb[ok])
        vals.append(np.full(ok.sum(), -1.0 / h ** 2))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def build_eigenbasis(domain: DomainSpec, n_modes, grid_shape=None) -> EigenBasis:
    """Eigenbasis of -Delta_D with ``n_modes`` modes.

    For a rectangle ``n_modes`` may be an int (lowest modes) or a pair (M, N)
    selecting the full index box m <= M, n <= N. ``grid_shape`` gives the number of
    interior nodes per direction (default: the largest index in each direction).
    """
    if domain.kind == "rectangle":
        if isinstance(n_modes, (tuple, list)):
            if min(n_modes) < 1:
                raise ValueError("n_modes must be >= 1")
        elif n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        mu, m, n = _rect_modes(domain, n_modes)
        if grid_shape is None:
            grid_shape = (int(m.max()), int(n.max()))
        if grid_shape[0] < m.max() or grid_shape[1] < n.max():
            raise ValueError("grid too coarse for the requested modes")
        return EigenBasis(domain, mu, m_idx=m, n_idx=n, grid_shape=tuple(grid_shape))

    mask, h = domain.mask, domain.h
    nint = int(mask.sum())
    if n_modes < 1 or n_modes > nint:
        raise ValueError(f"n_modes must lie in [1, {nint}]")
    A = dirichlet_matrix(mask, h)
    if nint <= 2500 or n_modes > nint // 3:
        mu, V = sla.eigh(A.toarray(), subset_by_index=[0, n_modes - 1])
    else:
        try:
            mu, V = spla.eigsh(A.tocsc(), k=n_modes, sigma=0.0, which="LM", tol=1e-12)
        except spla.ArpackNoConvergence as err:
            r = 0.0
            if err.eigenvalues.size:
                r = float(np.max(np.linalg.norm(A @ err.eigenvectors - err.eigenvectors * err.eigenvalues, axis=0)))
            raise EigenSolveError(f"eigensolver did not converge, residual {r:.3e}") from err
        order = np.argsort(mu)
        mu, V = mu[order], V[:, order]
    res = np.linalg.norm(A @ V - V * mu, axis=0)
    if np.max(res / np.maximum(mu, 1.0)) > 1e-6:
        raise EigenSolveError(f"eigenpair residual too large: {res.max():.3e}")
    V = V / h
    V = _orthonormalize_clusters(mu, V, h * h)
    # sign convention: positive sum (makes the ground state positive)
    s = np.sign(V.sum(axis=0))
    s[s == 0] = 1.0
    V = V * s
    return EigenBasis(domain, mu, vectors=V)


# ---------------------------------------------------------------- calculus

def project(f, basis: EigenBasis) -> SpectralField:
    vals = f.values if isinstance(f, GridField) else f
    return SpectralField(basis.analyze(vals), basis)


def reconstruct(c: SpectralField) -> GridField:
    return GridField(c.basis.synthesize(c.coeffs), c.basis.spacing)


def apply_dirichlet_power(f: SpectralField, s: float) -> SpectralField:
    """Lambda^s f = (-Delta_D)^{s/2} f, spectrally."""
    if s <= -2:
        raise ValueError("powers s <= -2 are not supported")
    return SpectralField(f.coeffs * f.basis.mu ** (0.5 * s), f.basis)


def heat_semigroup(f: SpectralField, t: float) -> SpectralField:
    if t < 0:
        raise ValueError("heat semigroup needs t >= 0")
    return SpectralField(f.coeffs * np.exp(-t * f.basis.mu), f.basis)


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre rule in u = log t on [log t_min, log t_max]."""
    panels_per_unit: float = 1.0
    order: int = 16
    tmin_factor: float = 1e-8
    tmax_factor: float = 40.0
    tol: float = 1e-9
    check: bool = True

    def nodes(self, mu_min, mu_max, refine=1):
        a = np.log(self.tmin_factor / mu_max)
        b = np.log(self.tmax_factor / mu_min)
        npan = max(1, int(np.ceil((b - a) * self.panels_per_unit * refine)))
        x, w = np.polynomial.legendre.leggauss(self.order)
        edges = np.linspace(a, b, npan + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        wu = (half[:, None] * w[None, :]).ravel()
        return np.exp(u), wu, np.exp(a), np.exp(b)


def _tail_low(mu, tmin, s):
    # int_0^tmin (1 - e^{-t mu}) t^{-1-s/2} dt as a convergent series (mu*tmin << 1)
    out = np.zeros_like(mu)
    term_sign = 1.0
    fact = 1.0
    for k in range(1, 8):
        fact *= k
        out += term_sign * mu ** k * tmin ** (k - 0.5 * s) / (fact * (k - 0.5 * s))
        term_sign = -term_sign
    return out


def subordination_constant(s: float, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """c_s from 1/c_s = int_0^inf (1 - e^{-tau}) tau^{-1-s/2} dtau, same quadrature."""
    one = np.ones(1)
    return 1.0 / float(_subordinate_multiplier(one, s, quad, 1.0, 1.0)[0])


def _subordinate_multiplier(mu, s, quad, mu_min, mu_max, refine=1):
    t, w, tmin, tmax = quad.nodes(mu_min, mu_max, refine)
    acc = np.zeros_like(mu)
    for tk, wk in zip(t, w):
        acc += wk * tk ** (-0.5 * s) * (1.0 - np.exp(-tk * mu))
    acc += _tail_low(mu, tmin, s)
    acc += tmax ** (-0.5 * s) / (0.5 * s)
    return acc


def lambda_via_subordination(f: SpectralField, s: float,
                             quad: QuadratureSpec = QuadratureSpec()) -> SpectralField:
    """Lambda^s f = c_s int_0^inf [f - e^{t Delta_D} f] t^{-1-s/2} dt for 0 < s < 2.

    The integral is taken in u = log t (so t^{-1-s/2} dt = t^{-s/2} du). Below
    t_min the integrand is summed as a power series, above t_max the e^{-t mu}
    part is dropped (bounded by e^{-40}) and the rest is integrated exactly.
    """
    if not (0 < s < 2):
        raise ValueError("subordination needs 0 < s < 2")
    mu = f.basis.mu
    c_s = subordination_constant(s, quad)

    def run(refine):
        t, w, tmin, tmax = quad.nodes(mu[0], mu[-1], refine)
        acc = np.zeros_like(f.coeffs)
        for tk, wk in zip(t, w):
            acc += (wk * tk ** (-0.5 * s)) * (f.coeffs - heat_semigroup(f, tk).coeffs)
        acc += _tail_low(mu, tmin, s) * f.coeffs
        acc += tmax ** (-0.5 * s) / (0.5 * s) * f.coeffs
        return c_s * acc

    out = run(1)
    if quad.check:
        fine = run(2)
        scale = max(np.linalg.norm(fine), 1e-300)
        if np.linalg.norm(fine - out) > quad.tol * scale:
            raise QuadratureError("subordination quadrature not converged: "
                                  f"refinement change {np.linalg.norm(fine - out) / scale:.2e}")
        out = fine
    return SpectralField(out, f.basis)


def riesz_velocity(theta: SpectralField):
    """u = grad^perp Lambda^{-1} theta = (-d_y psi, d_x psi) on the basis grid."""
    psi = apply_dirichlet_power(theta, -1.0)
    px, py = theta.basis.gradient(psi.coeffs)
    sp_ = theta.basis.spacing
    return GridField(-py, sp_), GridField(px, sp_)


def lambda_inverse_heat(theta: SpectralField, quad: QuadratureSpec = QuadratureSpec()) -> SpectralField:
    """Lambda^{-1} via (1/Gamma(1/2)) int_0^inf t^{-1/2} e^{t Delta_D} theta dt."""
    mu = theta.basis.mu
    t, w, tmin, tmax = quad.nodes(mu[0], mu[-1])
    acc = np.zeros_like(theta.coeffs)
    for tk, wk in zip(t, w):
        acc += wk * tk ** 0.5 * heat_semigroup(theta, tk).coeffs
    # [0, tmin]: e^{-t mu} ~ 1 - t mu ; [tmax, inf): bounded by e^{-40}
    acc += (2 * tmin ** 0.5 - (2.0 / 3.0) * tmin ** 1.5 * mu) * theta.coeffs
    return SpectralField(acc / gamma_fn(0.5), theta.basis)


def ground_state_ratio(basis: EigenBasis):
    """(min, max) over interior nodes of w_1(x)/d(x).

    For discretized domains d is the distance to the nearest exterior node, which
    is where the discrete Dirichlet condition is imposed.
    """
    w = basis.synthesize(np.eye(basis.n_modes)[0])
    m = basis.interior_mask()
    if basis.domain.kind == "rectangle":
        X, Y = basis.coords()
        d = basis.domain.boundary_distance(X[m], Y[m])
    else:
        d = ndimage.distance_transform_edt(basis.mask)[m] * basis.hx
    r = w[m] / d
    return float(r.min()), float(r.max())


def eigen_residuals(basis: EigenBasis):
    """||-Delta_h w_j - mu_j w_j||_inf per mode on the basis grid."""
    if basis.domain.kind == "rectangle":
        A = dirichlet_matrix(basis.interior_mask(), basis.hx) if basis.hx == basis.hy else None
        if A is None:
            raise ValueError("residual check needs equal spacing")
        m = basis.interior_mask()
        out = []
        for j in range(basis.n_modes):
            w = basis.mode(j)[0][m]
            out.append(np.max(np.abs(A @ w - basis.mu[j] * w)))
        return np.array(out)
    A = dirichlet_matrix(basis.mask, basis.hx)
    V = basis.vectors
    return np.max(np.abs(A @ V - V * basis.mu), axis=0)
