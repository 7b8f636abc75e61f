"""Incompressible 2D Navier-Stokes on a staggered MAC grid.

The flow runs along x (the long axis, ``nx = 2 * ny`` cells). ``u`` lives on
x-faces ([nx+1, ny]), ``v`` on y-faces ([nx, ny+1]), pressure at cell
centres. Boundaries: prescribed inflow at x=0, zero-gradient outflow with
zero pressure at x=L, free-slip walls at y=0 and y=H, and a solid cylinder
whose faces carry zero velocity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class CGNotConverged(SimulationError):
    def __init__(self, residuals: list[float]):
        super().__init__(f"CG did not converge in {len(residuals) - 1} iterations "
                         f"(residual {residuals[0]:.3e} -> {residuals[-1]:.3e})")
        self.residuals = residuals


class StabilityError(ValueError):
    def __init__(self, number: float, suggested_dt: float):
        super().__init__(f"explicit diffusion unstable: nu*dt/h^2 = {number:.3f} > 0.25; "
                         f"use dt <= {suggested_dt:.3e}")
        self.suggested_dt = suggested_dt


def viscosity(reynolds: float, diameter: float, speed: float) -> float:
    """Kinematic viscosity that realises ``reynolds`` for the given body size and speed."""
    if reynolds <= 0:
        raise ValueError("reynolds must be positive")
    return speed * diameter / reynolds


@dataclass
class SimConfig:
    nx: int = 128
    ny: int = 64
    dt: float = 0.05
    reynolds: float = 300.0
    # when set, Re ramps linearly from ``reynolds`` to this value over the export window
    reynolds_end: float | None = None
    cylinder_x: float = 0.25  # centre, fraction of domain length
    cylinder_y: float = 0.5   # centre, fraction of domain height
    diameter: float = 0.2     # fraction of domain height
    speed: float = 0.5
    height: float = 1.0
    warmup_steps: int = 20
    warmup_cut: int = 300
    total_steps: int = 1300
    export_stride: int = 2
    export_factor: int = 1    # spatial downsampling of exported fields
    cg_tol: float = 1e-6
    cg_max_iter: int = 10000
    perturbation: float = 0.0

    def __post_init__(self):
        if self.nx != 2 * self.ny:
            raise ValueError(f"grid must satisfy nx = 2*ny, got {self.nx}x{self.ny}")
        if self.reynolds <= 0 or (self.reynolds_end is not None and self.reynolds_end <= 0):
            raise ValueError("reynolds must be positive")
        if not 0.0 < self.diameter < 0.5:
            raise ValueError("diameter fraction must lie in (0, 0.5)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.export_stride < 1 or self.export_factor < 1:
            raise ValueError("export stride/factor must be >= 1")
        if self.nx % self.export_factor or self.ny % self.export_factor:
            raise ValueError("export_factor must divide the grid")
        if self.total_steps <= self.warmup_cut:
            raise ValueError("total_steps must exceed warmup_cut")

    @property
    def h(self) -> float:
        return self.height / self.ny

    @property
    def length(self) -> float:
        return 2.0 * self.height

    @property
    def diameter_abs(self) -> float:
        return self.diameter * self.height

    def geometry(self) -> dict:
        return {"cylinder_x": self.cylinder_x, "cylinder_y": self.cylinder_y,
                "diameter": self.diameter, "length": self.length, "height": self.height}


def cylinder_mask(nx: int, ny: int, cx: float, cy: float, diameter: float) -> np.ndarray:
    """Cells whose centres lie inside the cylinder; geometry in domain fractions
    (centre x as a fraction of length, everything else of height)."""
    h = 1.0 / ny
    x = (np.arange(nx) + 0.5) * h
    y = (np.arange(ny) + 0.5) * h
    X, Y = np.meshgrid(x, y, indexing="ij")
    return (X - cx * 2.0) ** 2 + (Y - cy) ** 2 <= (0.5 * diameter) ** 2


class Domain:
    """Static geometry: solid masks, face masks and the pressure operator."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        nx, ny = cfg.nx, cfg.ny
        self.nx, self.ny, self.h = nx, ny, cfg.h
        self.solid = cylinder_mask(nx, ny, cfg.cylinder_x, cfg.cylinder_y, cfg.diameter)
        fluid = ~self.solid
        # a face is blocked if either adjacent cell is solid
        us = np.zeros((nx + 1, ny), dtype=bool)
        us[1:] |= self.solid
        us[:-1] |= self.solid
        vs = np.zeros((nx, ny + 1), dtype=bool)
        vs[:, 1:] |= self.solid
        vs[:, :-1] |= self.solid
        self.u_solid, self.v_solid = us, vs
        # faces whose velocity the pressure gradient may correct
        self.u_open = np.zeros((nx + 1, ny), dtype=bool)
        self.u_open[1:nx] = fluid[1:] & fluid[:-1]
        self.u_open[nx] = fluid[nx - 1]
        self.v_open = np.zeros((nx, ny + 1), dtype=bool)
        self.v_open[:, 1:ny] = fluid[:, 1:] & fluid[:, :-1]
        self.index = -np.ones((nx, ny), dtype=np.int64)
        self.index[fluid] = np.arange(int(fluid.sum()))
        self.matrix = self._build_matrix()
        self.phi = np.zeros(self.matrix.shape[0])

    def _build_matrix(self) -> sp.csr_matrix:
        """SPD operator M = -h^2 * Laplacian over fluid cells (Neumann walls,
        Dirichlet zero at the outflow through a mirrored ghost cell)."""
        nx, ny, idx = self.nx, self.ny, self.index
        rows, cols, vals = [], [], []
        diag = np.zeros(idx.max() + 1)
        ii, jj = np.nonzero(idx >= 0)
        me = idx[ii, jj]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = ii + di, jj + dj
            inside = (ni >= 0) & (ni < nx) & (nj >= 0) & (nj < ny)
            nb = np.full(ii.shape, -1)
            nb[inside] = idx[ni[inside], nj[inside]]
            link = nb >= 0
            diag[me[link]] += 1.0
            rows.append(me[link])
            cols.append(nb[link])
            vals.append(-np.ones(link.sum()))
            if di == 1:
                out = ni == nx
                diag[me[out]] += 2.0
        rows.append(np.arange(diag.size))
        cols.append(np.arange(diag.size))
        vals.append(diag)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(diag.size, diag.size))


@dataclass
class SolverState:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    domain: Domain = field(repr=False)
    step_index: int = 0

    @property
    def solid(self) -> np.ndarray:
        return self.domain.solid

    def copy(self) -> "SolverState":
        return SolverState(self.u.copy(), self.v.copy(), self.p.copy(), self.domain, self.step_index)


def initial_state(domain: Domain, speed: float, perturbation: float = 0.0, seed: int = 0) -> SolverState:
    nx, ny = domain.nx, domain.ny
    u = np.full((nx + 1, ny), float(speed))
    v = np.zeros((nx, ny + 1))
    if perturbation > 0:
        rng = np.random.default_rng(seed)
        u += perturbation * rng.standard_normal(u.shape)
        v += perturbation * rng.standard_normal(v.shape)
    st = SolverState(u, v, np.zeros((nx, ny)), domain)
    apply_boundaries(st, np.full(ny, float(speed)))
    return st


def inflow_profile(ny: int, speed: float, modulated: bool) -> np.ndarray:
    if not modulated:
        return np.full(ny, float(speed))
    yhat = (np.arange(ny) + 0.5) / ny
    # 0.5 * (cos(pi * y) + 1) at the default freestream speed of 0.5
    return speed * (np.cos(np.pi * yhat) + 1.0)


def apply_boundaries(state: SolverState, inflow: np.ndarray | None = None, outflow: bool = False) -> SolverState:
    """Inflow, wall and obstacle conditions (in place).

    ``outflow=True`` also extrapolates the outflow face (zero gradient); that is
    done before projection, which then corrects it against zero pressure.
    """
    d = state.domain
    if inflow is not None:
        state.u[0] = inflow
    if outflow:
        state.u[-1] = state.u[-2]
    state.v[:, 0] = 0.0
    state.v[:, -1] = 0.0
    state.u[d.u_solid] = 0.0
    state.v[d.v_solid] = 0.0
    return state


# ---------------------------------------------------------------------------
# advection


def _sample(f: np.ndarray, fi: np.ndarray, fj: np.ndarray):
    """Bilinear sample of grid ``f`` at fractional indices (clamped); also
    returns the min/max of the four stencil values."""
    n0, n1 = f.shape
    fi = np.clip(fi, 0.0, n0 - 1)
    fj = np.clip(fj, 0.0, n1 - 1)
    i0 = np.minimum(np.floor(fi).astype(np.int64), n0 - 2)
    j0 = np.minimum(np.floor(fj).astype(np.int64), n1 - 2)
    ti = fi - i0
    tj = fj - j0
    a = f[i0, j0]
    b = f[i0 + 1, j0]
    c = f[i0, j0 + 1]
    e = f[i0 + 1, j0 + 1]
    val = (a * (1 - ti) + b * ti) * (1 - tj) + (c * (1 - ti) + e * ti) * tj
    lo = np.minimum(np.minimum(a, b), np.minimum(c, e))
    hi = np.maximum(np.maximum(a, b), np.maximum(c, e))
    return val, lo, hi


def maccormack(f: np.ndarray, vel_x: np.ndarray, vel_y: np.ndarray, dt: float, h: float) -> np.ndarray:
    """MacCormack advection of a grid quantity by a velocity given at its own
    sample points.

    Backward semi-Lagrangian predictor, reverse-advected corrector, then
    clamping to the extrema of the predictor's interpolation stencil.
    """
    n0, n1 = f.shape
    I, J = np.meshgrid(np.arange(n0, dtype=float), np.arange(n1, dtype=float), indexing="ij")
    di = dt * vel_x / h
    dj = dt * vel_y / h
    fwd, lo, hi = _sample(f, I - di, J - dj)
    back, _, _ = _sample(fwd, I + di, J + dj)
    return np.clip(fwd + 0.5 * (f - back), lo, hi)


def _u_at_v(u: np.ndarray) -> np.ndarray:
    """u averaged onto y-faces: [nx, ny+1]."""
    uc = 0.5 * (u[1:] + u[:-1])                       # [nx, ny]
    out = np.empty((uc.shape[0], uc.shape[1] + 1))
    out[:, 1:-1] = 0.5 * (uc[:, 1:] + uc[:, :-1])
    out[:, 0] = uc[:, 0]
    out[:, -1] = uc[:, -1]
    return out


def _v_at_u(v: np.ndarray) -> np.ndarray:
    """v averaged onto x-faces: [nx+1, ny]."""
    vc = 0.5 * (v[:, 1:] + v[:, :-1])                 # [nx, ny]
    out = np.empty((vc.shape[0] + 1, vc.shape[1]))
    out[1:-1] = 0.5 * (vc[1:] + vc[:-1])
    out[0] = vc[0]
    out[-1] = vc[-1]
    return out


def advect_maccormack(state: SolverState, dt: float) -> SolverState:
    """Self-advect both velocity components with the MacCormack scheme."""
    h = state.domain.h
    u, v = state.u, state.v
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise SimulationError(f"non-finite velocity before advection at step {state.step_index}")
    cfl = dt * max(np.abs(u).max(), np.abs(v).max()) / h
    if cfl > 1.0:
        log.debug("CFL number %.2f exceeds 1 at step %d", cfl, state.step_index)
    u_new = maccormack(u, u, _v_at_u(v), dt, h)
    v_new = maccormack(v, _u_at_v(u), v, dt, h)
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise SimulationError(f"non-finite velocity after advection at step {state.step_index}")
    state.u, state.v = u_new, v_new
    return state


# ---------------------------------------------------------------------------
# diffusion


def _laplacian(f: np.ndarray, h: float) -> np.ndarray:
    g = np.pad(f, 1, mode="edge")
    return (g[2:, 1:-1] + g[:-2, 1:-1] + g[1:-1, 2:] + g[1:-1, :-2] - 4.0 * f) / (h * h)


def diffusion_number(nu: float, dt: float, h: float) -> float:
    return nu * dt / (h * h)


def diffuse_explicit(state: SolverState, dt: float, reynolds: float, diameter: float,
                     speed: float) -> SolverState:
    """One explicit (forward Euler) viscous step; ``diameter`` is absolute."""
    nu = viscosity(reynolds, diameter, speed)
    return diffuse_nu(state, dt, nu)


def diffuse_nu(state: SolverState, dt: float, nu: float) -> SolverState:
    h = state.domain.h
    number = diffusion_number(nu, dt, h)
    if number > 0.25:
        raise StabilityError(number, 0.25 * h * h / nu)
    state.u = state.u + nu * dt * _laplacian(state.u, h)
    state.v = state.v + nu * dt * _laplacian(state.v, h)
    return state


# ---------------------------------------------------------------------------
# pressure projection


def conjugate_gradient(A, b: np.ndarray, x0: np.ndarray | None = None, tol: float = 1e-6,
                       max_iter: int = 10000, norm=None) -> tuple[np.ndarray, list[float]]:
    """Plain CG for SPD ``A``; stops once ``norm(r) <= tol``.

    ``norm`` defaults to the max norm. Returns the solution and the residual
    history; raises :class:`CGNotConverged` if ``max_iter`` is exhausted.
    """
    norm = norm or (lambda r: float(np.abs(r).max()) if r.size else 0.0)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    history = [norm(r)]
    if history[-1] <= tol:
        return x, history
    p = r.copy()
    rs = float(r @ r)
    for _ in range(max_iter):
        Ap = A @ p
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        history.append(norm(r))
        if history[-1] <= tol:
            return x, history
        rs_new = float(r @ r)
        p *= rs_new / rs
        p += r
        rs = rs_new
    raise CGNotConverged(history)


def divergence(state: SolverState) -> np.ndarray:
    h = state.domain.h
    return (state.u[1:] - state.u[:-1] + state.v[:, 1:] - state.v[:, :-1]) / h


def project_pressure_cg(state: SolverState, tol: float = 1e-6, max_iter: int = 10000,
                        dt: float = 1.0) -> SolverState:
    """Make the velocity discretely divergence-free.

    ``tol`` bounds the net face-velocity imbalance of every fluid cell after
    projection (``h * |div u|``, velocity units). The previous pressure
    solution warm-starts CG. ``state.p`` receives the pressure ``phi / dt``.
    """
    d = state.domain
    h = d.h
    fluid = d.index >= 0
    div = divergence(state)
    b = -h * h * div[fluid]
    # residual of M phi = -h^2 div equals -h^2 * (divergence after projection)
    phi, _ = conjugate_gradient(d.matrix, b, d.phi, tol=tol * h, max_iter=max_iter)
    d.phi = phi
    P = np.zeros((d.nx, d.ny))
    P[fluid] = phi
    gx = np.zeros_like(state.u)
    gx[1:-1] = P[1:] - P[:-1]
    gx[-1] = -2.0 * P[-1]
    gy = np.zeros_like(state.v)
    gy[:, 1:-1] = P[:, 1:] - P[:, :-1]
    state.u = state.u - np.where(d.u_open, gx / h, 0.0)
    state.v = state.v - np.where(d.v_open, gy / h, 0.0)
    state.p = P / dt
    return state


# ---------------------------------------------------------------------------
# time stepping


def step(state: SolverState, cfg: SimConfig, reynolds: float | None = None,
         inflow: np.ndarray | None = None) -> SolverState:
    """advect -> diffuse -> (no forcing) -> project -> boundaries."""
    re = cfg.reynolds if reynolds is None else reynolds
    if inflow is None:
        inflow = inflow_profile(cfg.ny, cfg.speed, modulated=False)
    advect_maccormack(state, cfg.dt)
    nu = viscosity(re, cfg.diameter_abs, cfg.speed)
    # split the viscous step when a single explicit step would be unstable
    n_sub = max(1, math.ceil(diffusion_number(nu, cfg.dt, cfg.h) / 0.25 - 1e-12))
    for _ in range(n_sub):
        diffuse_nu(state, cfg.dt / n_sub, nu)
    apply_boundaries(state, inflow, outflow=True)
    project_pressure_cg(state, cfg.cg_tol, cfg.cg_max_iter, dt=cfg.dt)
    apply_boundaries(state, inflow)
    state.step_index += 1
    return state


def collocated(state: SolverState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Velocity resampled to cell centres, plus pressure."""
    uc = 0.5 * (state.u[1:] + state.u[:-1])
    vc = 0.5 * (state.v[:, 1:] + state.v[:, :-1])
    return uc, vc, state.p.copy()


def _block_mean(f: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return f
    a, b = f.shape
    return f.reshape(a // factor, factor, b // factor, factor).mean(axis=(1, 3))


def reynolds_at(cfg: SimConfig, t: int) -> float:
    if cfg.reynolds_end is None:
        return cfg.reynolds
    return cfg.reynolds + (cfg.reynolds_end - cfg.reynolds) * t / cfg.total_steps


def export_mask(cfg: SimConfig) -> np.ndarray:
    """Obstacle mask at export resolution (True inside the cylinder)."""
    f = cfg.export_factor
    return cylinder_mask(cfg.nx // f, cfg.ny // f, cfg.cylinder_x, cfg.cylinder_y, cfg.diameter)


def generate_trajectory(cfg: SimConfig, seed: int = 0, callback=None):
    """Run the solver and export collocated velocity and pressure.

    The inflow is modulated during the first ``warmup_steps``; states with
    step index <= ``warmup_cut`` are discarded and every ``export_stride``-th
    state after that is kept. ``callback(state)`` is invoked after every step.
    """
    from ..data.trajectory import Trajectory

    domain = Domain(cfg)
    state = initial_state(domain, cfg.speed, cfg.perturbation, seed)
    steady = inflow_profile(cfg.ny, cfg.speed, modulated=False)
    warm = inflow_profile(cfg.ny, cfg.speed, modulated=True)
    mask = export_mask(cfg)
    frames, res = [], []
    for t in range(1, cfg.total_steps + 1):
        re = reynolds_at(cfg, t)
        step(state, cfg, re, warm if t <= cfg.warmup_steps else steady)
        if not (np.all(np.isfinite(state.u)) and np.all(np.isfinite(state.v))):
            raise SimulationError(f"divergence blowup at step {t}")
        if callback is not None:
            callback(state)
        if t > cfg.warmup_cut and (t - cfg.warmup_cut) % cfg.export_stride == 0:
            fields = [_block_mean(c, cfg.export_factor) for c in collocated(state)]
            frame = np.stack(fields)
            frame[:, mask] = 0.0
            frames.append(frame)
            res.append(re)
    res = np.asarray(res)
    states = np.concatenate([np.stack(frames), np.broadcast_to(res[:, None, None, None],
                             (len(res), 1) + mask.shape)], axis=1)
    meta = {"sim": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}, "seed": seed,
            "geometry": cfg.geometry(), "mask": "cylinder"}
    return Trajectory(states, dt=cfg.dt * cfg.export_stride, params={"reynolds": res},
                      source="fluid-sim", meta=meta)
