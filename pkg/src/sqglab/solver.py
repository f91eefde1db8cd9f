"""Critical SQG time stepping, the linear drift-diffusion solve, the Picard map and
the run diagnostics (max principle, energy balance, Holder quotients)."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import _accel
from .spectral import (DomainSpec, EigenBasis, GridField, SpectralField, apply_dirichlet_power,
                       build_eigenbasis, centered_gradient, rectangle)

log = logging.getLogger(__name__)

ALPHA_GUARD = 0.05


class CFLError(RuntimeError):
    pass


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnalysisParams:
    alpha: float = 0.02
    alpha0: float = 0.5
    h_set: Optional[tuple] = None   # displacement magnitudes; default from the grid
    n_dirs: int = 4

    def __post_init__(self):
        if not (0 < self.alpha < self.alpha0 < 1):
            raise ValueError("need 0 < alpha < alpha0 < 1")
        if self.h_set is not None:
            if len(self.h_set) == 0 or min(self.h_set) <= 0:
                raise ValueError("h_set must be nonempty with positive entries")


@dataclass(frozen=True)
class SimConfig:
    domain: DomainSpec = field(default_factory=rectangle)
    n_modes: object = (32, 32)
    dt: float = 1e-3
    t_end: float = 0.1
    dealias: float = 2.0 / 3.0
    initial: dict = field(default_factory=lambda: {"kind": "mode_sum", "modes": {0: 1.0}})
    cadence: int = 10
    analysis: AnalysisParams = field(default_factory=AnalysisParams)
    nonlinear: bool = True
    cfl: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if not (0 < self.dealias <= 1):
            raise ValueError("dealias fraction must lie in (0, 1]")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class SimState:
    theta: SpectralField
    t: float = 0.0
    n: int = 0
    blown_up: bool = False


@dataclass
class DiagnosticsRecord:
    time: float
    linf: float
    l2: float
    half_norm: float
    holder: float
    c1half: float
    c1half_integral: float
    max_principle_drift: float
    energy_residual: float
    h_star: float = 0.0
    q_star: float = 0.0
    h_bound: float = math.inf

    FIELDS = ("time", "linf", "l2", "half_norm", "holder", "c1half", "c1half_integral",
              "max_principle_drift", "energy_residual", "h_star", "q_star", "h_bound")

    def row(self):
        return [getattr(self, k) for k in self.FIELDS]


@dataclass
class HolderProbe:
    value: float
    x_star: tuple
    h_star: tuple
    offsets: np.ndarray
    magnitudes: np.ndarray

    @property
    def h_norm(self) -> float:
        return float(np.hypot(*self.h_star))


@dataclass
class RunResult:
    records: list
    decay_rate: float
    linf_steps: np.ndarray
    l2_steps: np.ndarray
    energy_residuals: np.ndarray
    times: np.ndarray
    blown_up: bool = False
    message: str = ""
    state: Optional[SimState] = None


def solver_basis(cfg: SimConfig) -> EigenBasis:
    """Basis with a grid fine enough that quadratic products do not alias onto kept modes."""
    dom = cfg.domain
    if dom.kind == "rectangle":
        if isinstance(cfg.n_modes, (tuple, list)):
            M, N = cfg.n_modes
        else:
            b0 = build_eigenbasis(dom, cfg.n_modes)
            M, N = int(b0.m_idx.max()), int(b0.n_idx.max())
        grid = (int(math.ceil(M / cfg.dealias)), int(math.ceil(N / cfg.dealias)))
        return build_eigenbasis(dom, cfg.n_modes, grid_shape=grid)
    return build_eigenbasis(dom, cfg.n_modes)


def initial_field(basis: EigenBasis, spec: dict, seed: int = 0) -> SpectralField:
    kind = spec.get("kind", "mode_sum")
    c = np.zeros(basis.n_modes)
    if kind == "zero":
        pass
    elif kind == "mode_sum":
        for j, a in dict(spec.get("modes", {})).items():
            c[int(j)] += float(a)
    elif kind == "random":
        # smooth random data: Gaussian coefficients on the lowest modes, then scaled
        rng = np.random.default_rng(seed)
        k = min(int(spec.get("n_low", 12)), basis.n_modes)
        c[:k] = rng.standard_normal(k) * np.exp(-basis.mu[:k] / basis.mu[k - 1])
        amp = float(spec.get("amplitude", 1.0))
        g = basis.synthesize(c)
        c *= amp / max(np.abs(g).max(), 1e-300)
    elif kind == "gaussian_bump":
        X, Y = basis.coords()
        x0, y0 = spec.get("center", (0.5, 0.5))
        w = float(spec.get("width", 0.1))
        g = float(spec.get("amplitude", 1.0)) * np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / (2 * w * w))
        g[~basis.interior_mask()] = 0.0
        c = basis.analyze(g)
    elif kind == "file":
        from .fields_io import read_fields
        _, arrs = read_fields(spec["path"])
        src = arrs["coeffs"]
        n = min(src.size, basis.n_modes)
        c[:n] = src[:n]
    else:
        raise ValueError(f"unknown initial data kind {kind!r}")
    return SpectralField(c, basis)


# ---------------------------------------------------------------- dynamics

def advection(theta_c, basis: EigenBasis, b=None):
    """-P[b . grad theta]; b defaults to the Riesz velocity of theta.

    Returns (coefficients, max |b| on the grid).
    """
    gx, gy = basis.gradient(theta_c)
    if b is None:
        px, py = basis.gradient(theta_c / np.sqrt(basis.mu))
        bx, by = -py, px
    else:
        bx, by = b
    prod = bx * gx + by * gy
    vmax = float(np.sqrt(np.max(bx * bx + by * by))) if bx.size else 0.0
    return -basis.analyze(prod), vmax


def _hmin(basis):
    return min(basis.hx, basis.hy)


def _check_cfl(vmax, dt, basis, limit):
    c = vmax * dt / _hmin(basis)
    if c > limit:
        raise CFLError(f"CFL violated: max|u| = {vmax:.4g}, dt*max|u|/h = {c:.3g} > {limit}")


def step(state: SimState, cfg: SimConfig, basis: Optional[EigenBasis] = None) -> SimState:
    """One integrating-factor Heun step of critical SQG."""
    basis = basis or state.theta.basis
    dt = cfg.dt
    E = np.exp(-dt * np.sqrt(basis.mu))
    th = state.theta.coeffs
    if cfg.nonlinear:
        k1, vmax = advection(th, basis)
        _check_cfl(vmax, dt, basis, cfg.cfl)
        k2, _ = advection(E * (th + dt * k1), basis)
        new = E * th + 0.5 * dt * (E * k1 + k2)
    else:
        new = E * th
    if not np.all(np.isfinite(new)):
        return SimState(state.theta, state.t, state.n, blown_up=True)
    return SimState(SpectralField(new, basis), state.t + dt, state.n + 1)


def energy_residual(c_old, c_new, mu, dt):
    """(|theta_new|^2 - |theta_old|^2)/dt + dissipation of the exact per-mode decay.

    The dissipation term sum theta_j^2 (1 - e^{-2 dt sqrt(mu_j)})/dt is the one-step
    version of 2 |Lambda^{1/2} theta|^2 and tends to it as dt -> 0.
    """
    diss = np.sum(c_old ** 2 * -np.expm1(-2 * dt * np.sqrt(mu))) / dt
    return (np.dot(c_new, c_new) - np.dot(c_old, c_old)) / dt + diss


# ---------------------------------------------------------------- Holder quotients

def _offsets(basis: EigenBasis, h_set, n_dirs=4):
    hx, hy = basis.spacing
    if h_set is None:
        diam = basis.domain.diameter
        h_set = tuple(np.geomspace(min(hx, hy), 0.5 * diam, 12))
    offs = {}
    for r in h_set:
        for a in np.arange(n_dirs) * np.pi / n_dirs:
            di = int(round(r * np.cos(a) / hx))
            dj = int(round(r * np.sin(a) / hy))
            if (di, dj) == (0, 0):
                continue
            if di < 0 or (di == 0 and dj < 0):
                di, dj = -di, -dj
            offs[(di, dj)] = None
    o = np.array(sorted(offs), dtype=np.int64).reshape(-1, 2)
    mags = np.hypot(o[:, 0] * hx, o[:, 1] * hy)
    return o, mags


def holder_quotient(values, spacing, sample, offsets, alpha, valid=None):
    """sup over sample nodes x and offsets h of |f(x+h) - f(x)|/|h|^alpha.

    Values outside the array are 0. With ``valid`` given, only pairs whose
    endpoint is a valid node are compared (used for fields without zero trace).
    """
    hx, hy = spacing
    o = np.asarray(offsets, np.int64)
    if o.size == 0 or not np.any(sample):
        raise ValueError("empty sample or displacement set")
    mags = np.hypot(o[:, 0] * hx, o[:, 1] * hy)
    # both signs of each offset
    allo = np.concatenate([o, -o])
    allm = np.concatenate([mags, mags])
    p = int(np.abs(allo).max())
    F = np.pad(np.asarray(values, float), p)
    S = np.pad(np.asarray(sample, bool), p)
    w = allm ** (-alpha)
    if valid is None:
        val, k, i, j = _accel.holder_sup(F, S, allo, w)
    else:
        V = np.pad(np.asarray(valid, bool), p)
        # invalid endpoints are handled by splitting per offset
        val, k, i, j = 0.0, -1, -1, -1
        for kk in range(allo.shape[0]):
            di, dj = allo[kk]
            Sk = S & np.roll(np.roll(V, -di, 0), -dj, 1)
            v, _, ii, jj = _accel.holder_sup(F, Sk, allo[kk:kk + 1], w[kk:kk + 1])
            if v > val:
                val, k, i, j = v, kk, ii, jj
    if k < 0:
        return 0.0, (0, 0), (0.0, 0.0)
    return float(val), (i - p, j - p), (allo[k, 0] * hx, allo[k, 1] * hy)


def holder_seminorm(theta: GridField, params: AnalysisParams, basis: EigenBasis,
                    sample=None):
    """[theta]_{C^alpha} estimate over interior sample nodes and the h_set displacements.

    theta is extended by zero outside the grid, consistent with its zero trace.
    """
    if sample is None:
        sample = basis.interior_mask()
    sample = np.asarray(sample, bool)
    if not sample.any():
        raise ValueError("empty sample set")
    offs, mags = _offsets(basis, params.h_set, params.n_dirs)
    val, xs, hs = holder_quotient(theta.values, basis.spacing, sample, offs, params.alpha)
    X, Y = basis.coords()
    x_star = (float(X[xs]), float(Y[xs])) if val > 0 else (math.nan, math.nan)
    return val, HolderProbe(val, x_star, hs, offs, mags)


def c1half_estimate(grid_vals, basis: EigenBasis, params: AnalysisParams):
    """||theta||_inf + ||grad theta||_inf + [grad theta]_{alpha/2} with centered differences."""
    gx, gy = centered_gradient(grid_vals, basis.hx, basis.hy)
    closure = np.pad(basis.interior_mask(), 1, constant_values=False)
    closure = (closure[1:-1, 1:-1] | closure[2:, 1:-1] | closure[:-2, 1:-1]
               | closure[1:-1, 2:] | closure[1:-1, :-2])
    inner = basis.interior_mask()
    offs, _ = _offsets(basis, params.h_set, params.n_dirs)
    a2 = 0.5 * params.alpha
    sx, _, _ = holder_quotient(gx, basis.spacing, inner, offs, a2, valid=closure)
    sy, _, _ = holder_quotient(gy, basis.spacing, inner, offs, a2, valid=closure)
    g = np.hypot(gx, gy)[closure]
    return float(np.abs(grid_vals).max() + g.max() + max(sx, sy))


# ---------------------------------------------------------------- run

def fit_decay_rate(times, l2):
    """Least-squares rate of log ||theta||_2 over the last half of the series."""
    times = np.asarray(times)
    l2 = np.asarray(l2)
    k = len(times) // 2
    t, y = times[k:], l2[k:]
    ok = y > 0
    if ok.sum() < 2:
        return math.nan
    slope = np.polyfit(t[ok], np.log(y[ok]), 1)[0]
    return float(-slope)


def run(cfg: SimConfig, basis: Optional[EigenBasis] = None, theta0: Optional[SpectralField] = None,
        on_record: Optional[Callable] = None) -> RunResult:
    """Integrate to t_end, recording diagnostics every ``cadence`` steps."""
    basis = basis or solver_basis(cfg)
    theta0 = theta0 if theta0 is not None else initial_field(basis, cfg.initial, cfg.seed)
    params = cfg.analysis
    sq = np.sqrt(basis.mu)
    g0 = basis.synthesize(theta0.coeffs)
    linf0 = float(np.abs(g0).max())
    if params.alpha * (linf0 + 1) > ALPHA_GUARD:
        warnings.warn(f"alpha*(|theta0|_inf + 1) = {params.alpha * (linf0 + 1):.3g} exceeds "
                      f"{ALPHA_GUARD}; the a priori smallness condition may fail", RuntimeWarning)
    state = SimState(theta0)
    records = []
    times = [0.0]
    linfs = [linf0]
    l2s = [theta0.l2()]
    eres = []
    integral = 0.0
    last_c1 = None
    last_t = 0.0
    max_drift = 0.0
    msg = ""

    def record(st, grid):
        nonlocal integral, last_c1, last_t
        c = st.theta.coeffs
        gf = GridField(grid, basis.spacing)
        hval, probe = holder_seminorm(gf, params, basis)
        c1 = c1half_estimate(grid, basis, params)
        if last_c1 is not None:
            integral += 0.5 * (c1 + last_c1) * (st.t - last_t)
        last_c1, last_t = c1, st.t
        linf = float(np.abs(grid).max())
        hb = (2 * linf / hval) ** (1 / params.alpha) if hval > 0 else math.inf
        r = DiagnosticsRecord(
            time=st.t, linf=linf, l2=float(np.linalg.norm(c)),
            half_norm=float(np.sqrt(np.sum(sq * c * c))), holder=hval, c1half=c1,
            c1half_integral=integral, max_principle_drift=max_drift,
            energy_residual=float(eres[-1]) if eres else 0.0,
            h_star=probe.h_norm if hval > 0 else 0.0, q_star=hval, h_bound=hb)
        records.append(r)
        if on_record is not None:
            on_record(r)

    record(state, g0)
    blown = False
    for n in range(cfg.n_steps):
        try:
            new = step(state, cfg, basis)
        except CFLError as err:
            msg = str(err)
            log.warning("run aborted: %s", msg)
            blown = True
            break
        if new.blown_up:
            msg = f"non-finite coefficients at t = {state.t + cfg.dt:.6g}"
            blown = True
            break
        grid = basis.synthesize(new.theta.coeffs)
        linf = float(np.abs(grid).max())
        eres.append(energy_residual(state.theta.coeffs, new.theta.coeffs, basis.mu, cfg.dt))
        max_drift = max(max_drift, linf - linfs[-1])
        times.append(new.t)
        linfs.append(linf)
        l2s.append(new.theta.l2())
        state = new
        if linf > 10 * max(linf0, 1e-300) and linf0 > 0:
            msg = f"|theta|_inf grew more than 10x by t = {state.t:.6g}"
            blown = True
            record(state, grid)
            break
        if (n + 1) % cfg.cadence == 0 or n + 1 == cfg.n_steps:
            record(state, grid)
    rate = fit_decay_rate(times, l2s) if len(times) > 2 else math.nan
    return RunResult(records, rate, np.array(linfs), np.array(l2s), np.array(eres),
                     np.array(times), blown, msg, state)


# ---------------------------------------------------------------- linear drift

@dataclass
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray          # (n_steps + 1, n_modes)
    linf: np.ndarray
    basis: EigenBasis

    def field(self, k) -> SpectralField:
        return SpectralField(self.coeffs[k], self.basis)


def _etd_weights(mu, dt):
    """Exact weights for forcing linear in time over one step of v' = -sqrt(mu) v + f."""
    z = dt * np.sqrt(mu)
    small = z < 1e-4
    zs = np.where(small, 1.0, z)
    phi1 = np.where(small, 1 - z / 2 + z * z / 6, -np.expm1(-zs) / zs)
    phi2 = np.where(small, 0.5 - z / 6 + z * z / 24, (zs - 1 + np.exp(-zs)) / zs ** 2)
    w1 = dt * phi2
    w0 = dt * phi1 - w1
    return w0, w1


def linear_drift_solve(b, f, v0: SpectralField, cfg: SimConfig, n_steps: Optional[int] = None,
                       check_cfl: bool = True) -> Trajectory:
    """Solve dv/dt + b.grad v + Lambda v = f.

    ``b(t, n)`` returns grid velocity components (or None for no drift);
    ``f(t, n)`` returns forcing coefficients (or None). Drift is advanced by the
    same integrating-factor Heun step as ``step``; forcing by exact exponential
    weights for a linear-in-time f.
    """
    basis = v0.basis
    dt = cfg.dt
    N = cfg.n_steps if n_steps is None else n_steps
    E = np.exp(-dt * np.sqrt(basis.mu))
    w0, w1 = _etd_weights(basis.mu, dt)
    out = np.empty((N + 1, basis.n_modes))
    out[0] = v0.coeffs
    linf = np.empty(N + 1)
    linf[0] = np.abs(basis.synthesize(v0.coeffs)).max()
    times = np.arange(N + 1) * dt
    bget = b if callable(b) else (lambda t, n: b)
    fget = f if callable(f) else (lambda t, n: f)
    f_prev = fget(0.0, 0)
    b_prev = bget(0.0, 0)
    v = v0.coeffs.copy()
    for n in range(N):
        t1 = times[n + 1]
        b_next = bget(t1, n + 1)
        f_next = fget(t1, n + 1)
        new = E * v
        if b_prev is not None:
            k1, vmax = advection(v, basis, b_prev)
            if check_cfl:
                _check_cfl(vmax, dt, basis, cfg.cfl)
            pred = E * (v + dt * k1)
            if f_prev is not None:
                pred = pred + w0 * f_prev + w1 * (f_next if f_next is not None else 0.0)
            k2, _ = advection(pred, basis, b_next if b_next is not None else b_prev)
            new = new + 0.5 * dt * (E * k1 + k2)
        if f_prev is not None or f_next is not None:
            fa = f_prev if f_prev is not None else 0.0
            fb = f_next if f_next is not None else 0.0
            new = new + w0 * fa + w1 * fb
        if not np.all(np.isfinite(new)):
            raise BlowUpError(f"non-finite iterate at t = {t1:.6g}")
        v = new
        out[n + 1] = v
        linf[n + 1] = np.abs(basis.synthesize(v)).max()
        b_prev, f_prev = b_next, f_next
    return Trajectory(times, out, linf, basis)


def riesz_grid(c, basis):
    px, py = basis.gradient(c / np.sqrt(basis.mu))
    return -py, px


# ---------------------------------------------------------------- Picard

@dataclass
class PicardResult:
    iterates: list
    distances: np.ndarray     # d(v_k, v_{k-1}), k = 1..n
    ratios: np.ndarray        # d_{k+1}/d_k, k = 1..n-1
    diverged: bool
    T: float


def traj_distance(a: Trajectory, b: Trajectory) -> float:
    """sup over time of the grid L-infinity distance."""
    d = 0.0
    for k in range(a.coeffs.shape[0]):
        d = max(d, float(np.abs(a.basis.synthesize(a.coeffs[k] - b.coeffs[k])).max()))
    return d


def picard_iterate(theta0: SpectralField, T: float, n_iter: int, cfg: SimConfig) -> PicardResult:
    """Iterate v_{k+1} = T(v_k): the linear drift solve with b = grad^perp Lambda^{-1} v_k."""
    basis = theta0.basis
    nsteps = max(1, int(round(T / cfg.dt)))
    c2 = replace(cfg, t_end=nsteps * cfg.dt)
    times = np.arange(nsteps + 1) * cfg.dt
    v = Trajectory(times, np.tile(theta0.coeffs, (nsteps + 1, 1)),
                   np.full(nsteps + 1, np.abs(basis.synthesize(theta0.coeffs)).max()), basis)
    iterates = [v]
    dists = []
    for k in range(n_iter):
        prev = iterates[-1]
        bfield = [riesz_grid(prev.coeffs[m], basis) for m in range(nsteps + 1)]
        nxt = linear_drift_solve(lambda t, m: bfield[m], None, theta0, c2, n_steps=nsteps)
        iterates.append(nxt)
        dists.append(traj_distance(nxt, prev))
        if dists[-1] == 0.0:
            break
    d = np.array(dists)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(d[:-1] > 0, d[1:] / np.where(d[:-1] > 0, d[:-1], 1.0), 0.0)
    run_over = 0
    diverged = False
    for r in ratios:
        run_over = run_over + 1 if r > 1 else 0
        if run_over >= 3:
            diverged = True
    if diverged:
        log.warning("Picard iteration not contracting at T = %g", T)
    return PicardResult(iterates, d, ratios, diverged, nsteps * cfg.dt)


# ---------------------------------------------------------------- boundary traces

def _extrapolated_trace(g):
    """Linear extrapolation 2 f_1 - f_2 from the first two interior rows on each side."""
    sides = [2 * g[1, 1:-1] - g[2, 1:-1], 2 * g[-2, 1:-1] - g[-3, 1:-1],
             2 * g[1:-1, 1] - g[1:-1, 2], 2 * g[1:-1, -2] - g[1:-1, -3]]
    return float(max(np.abs(s).max() for s in sides))


def boundary_trace_check(theta: SpectralField, n: int):
    """For k = 0..n: (spectral trace, extrapolated trace) of Delta^k theta on the boundary.

    Delta^k theta = (-1)^k sum mu_j^k theta_j w_j; the spectral trace samples it at the
    boundary nodes, the extrapolated one rebuilds it from interior nodes only.
    """
    basis = theta.basis
    if basis.domain.kind != "rectangle":
        raise NotImplementedError("trace extrapolation implemented for rectangles")
    bmask = basis.boundary_mask()
    out = []
    for k in range(n + 1):
        c = (-basis.mu) ** k * theta.coeffs
        g = basis.synthesize(c)
        out.append((float(np.abs(g[bmask]).max()), _extrapolated_trace(g)))
    return out


def poisson_bracket_trace(theta: SpectralField) -> float:
    """sup over the first interior ring of |{Lambda^{-1} theta, theta}|."""
    basis = theta.basis
    ux, uy = riesz_grid(theta.coeffs, basis)
    gx, gy = basis.gradient(theta.coeffs)
    pb = ux * gx + uy * gy
    ring = np.concatenate([pb[1, 1:-1], pb[-2, 1:-1], pb[1:-1, 1], pb[1:-1, -2]])
    return float(np.abs(ring).max())
