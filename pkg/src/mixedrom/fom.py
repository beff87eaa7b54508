"""Miniature full-order solver used to generate snapshot campaigns.

Chorin projection on the colocated grid: explicit convection and diffusion
in the predictor, an exact discrete pressure projection in the corrector, and
an algebraic Smagorinsky-type eddy viscosity recomputed every step.

The viscous term is written as

    nu (lap u + div(grad u^T)) + nu_t lap u + div(nu_t grad u^T)

so that the Galerkin operators B, B_T, C_T1 and C_T2 are projections of the
same discrete stencils.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .archive import SnapshotArchive
from .boundary import FlowBoundary
from .grid import Block, SideSegment, StructuredGrid
from .postproc import surface_force

log = logging.getLogger(__name__)


class FomError(RuntimeError):
    pass


@dataclass
class FomConfig:
    """Campaign setup.

    ``dt`` is the solver time step (scalar or one per sample).  Snapshots
    are saved every ``save_every`` steps after ``spin_up`` time units, so
    the per-sample snapshot interval is ``dt * save_every``.  With
    ``steady_tol`` set, spin-up stops early once ``max|du|/dt`` drops
    below it.

    With ``phase_patch`` set, stepping continues after spin-up until the
    lift on that patch crosses zero upwards (within ``phase_wait`` time
    units).  Capture starts there and snapshot times are measured from that
    instant, so periodic samples share a common phase origin.
    """

    grid: StructuredGrid
    boundary: FlowBoundary
    nu: float
    samples: list[float]
    dt: float | list[float]
    n_snapshots: int = 1
    save_every: int = 1
    spin_up: float = 0.0
    steady_tol: float | None = None
    c_s: float = 0.17
    delta_les: float | None = None
    convection: str = "central"
    cfl_max: float = 0.9
    div_tol: float = 1e-8
    poisson_tol: float = 1e-10
    initial: str = "uniform"
    preset: str = "custom"
    phase_patch: str | None = None
    phase_wait: float = 50.0

    def __post_init__(self):
        self.samples = [float(m) for m in self.samples]
        if len(set(self.samples)) != len(self.samples):
            raise ValueError("parameter samples must be distinct")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")
        if self.n_snapshots < 1:
            raise ValueError("n_snapshots must be >= 1")
        for dt in self.dts:
            if dt <= 0:
                raise ValueError("dt must be positive")
        if self.delta_les is None:
            self.delta_les = float(np.sqrt(self.grid.dx * self.grid.dy))
        self.boundary.validate(self.grid)
        if self.phase_patch is not None and self.phase_patch not in self.grid.patch_names:
            raise ValueError(f"unknown phase patch {self.phase_patch!r}")
        if self.phase_wait <= 0:
            raise ValueError("phase_wait must be positive")

    @property
    def dts(self) -> list[float]:
        if np.isscalar(self.dt):
            return [float(self.dt)] * len(self.samples)
        if len(self.dt) != len(self.samples):
            raise ValueError("need one dt per sample")
        return [float(d) for d in self.dt]


@dataclass
class FomState:
    u: np.ndarray
    p: np.ndarray
    nu_t: np.ndarray
    t: float = 0.0
    u_in: float = 0.0


def eddy_viscosity_field(grid: StructuredGrid, u: np.ndarray, ub: np.ndarray | None,
                         c_s: float, delta: float, grad: np.ndarray | None = None) -> np.ndarray:
    """``(c_s delta)^2 |S|`` with ``|S| = sqrt(2 S:S)`` from the cell gradient."""
    g = grid.vector_gradient(u, ub) if grad is None else grad
    s = 0.5 * (g + np.transpose(g, (0, 2, 1)))
    mag = np.sqrt(2.0 * np.sum(s * s, axis=(1, 2)))
    return (c_s * delta) ** 2 * mag


class FomSolver:
    """Chorin projection stepper for one grid/boundary setup."""

    def __init__(self, config: FomConfig):
        self.config = config
        self.grid = config.grid
        self.bc = config.boundary
        self._vmask = self.bc.velocity_dirichlet_mask(self.grid)
        self._pmask = self.bc.pressure_dirichlet_mask(self.grid)
        self._build_projection()

    # ------------------------------------------------------------ assembly
    def _build_projection(self) -> None:
        g = self.grid
        n = g.n_cells
        o, nb, ax = g.owner, g.neighbour, g.face_axis
        w = 0.5 * g.face_area / g.cell_volumes[o]  # uniform volumes
        # gradient with homogeneous pressure trace
        rows = np.concatenate([ax * n + o, ax * n + o, ax * n + nb, ax * n + nb])
        cols = np.concatenate([o, nb, o, nb])
        vals = np.concatenate([w, w, -w, -w])
        free = ~self._pmask
        bc, bax = g.bface_cell[free], g.bface_axis[free]
        bw = (g.bface_sign * g.bface_area)[free] / g.cell_volumes[bc]
        G = sp.coo_matrix((np.concatenate([vals, bw]),
                           (np.concatenate([rows, bax * n + bc]), np.concatenate([cols, bc]))),
                          shape=(2 * n, n)).tocsr()
        # divergence with homogeneous velocity trace (normal component)
        free = ~self._vmask[np.arange(g.n_bfaces), g.bface_axis]
        bc, bax = g.bface_cell[free], g.bface_axis[free]
        bw = (g.bface_sign * g.bface_area)[free] / g.cell_volumes[bc]
        drows = np.concatenate([o, o, nb, nb, bc])
        dcols = np.concatenate([ax * n + o, ax * n + nb, ax * n + o, ax * n + nb, bax * n + bc])
        D = sp.coo_matrix((np.concatenate([vals, bw]), (drows, dcols)),
                          shape=(n, 2 * n)).tocsr()
        A = (D @ G).tolil()
        self.pinned = not self._pmask.any()
        if self.pinned:
            A[0, :] = 0.0
            A[0, 0] = 1.0
        self.G, self.D = G, D
        self.A = A.tocsc()
        self._lu = splu(self.A)

    # --------------------------------------------------------------- pieces
    def velocity_trace(self, u: np.ndarray, u_in: float) -> np.ndarray:
        return np.where(self._vmask, self.bc.velocity_values(self.grid, u_in),
                        self.grid.extrapolate(u))

    def pressure_trace(self, p: np.ndarray) -> np.ndarray:
        return np.where(self._pmask, self.bc.p_out, self.grid.extrapolate(p))

    def eddy_viscosity(self, u: np.ndarray, ub: np.ndarray, grad: np.ndarray | None = None) -> np.ndarray:
        c = self.config
        return eddy_viscosity_field(self.grid, u, ub, c.c_s, c.delta_les, grad)

    def momentum_rhs(self, u: np.ndarray, ub: np.ndarray, nu_t: np.ndarray,
                     grad: np.ndarray | None = None) -> np.ndarray:
        """Explicit convection + diffusion, without the pressure gradient."""
        g, nu = self.grid, self.config.nu
        lap = g.laplacian(u, None, ub)
        rhs = -g.convection(u, ub, u, ub, self.config.convection)
        nu_eff = nu + nu_t
        rhs += nu_eff[:, None] * lap
        rhs += g.div_grad_transpose(u, ub, nu_eff, g.extrapolate(nu_eff), grad=grad)
        return rhs

    def divergence(self, u: np.ndarray, u_in: float) -> np.ndarray:
        return self.grid.divergence(u, self.velocity_trace(u, u_in))

    def cfl(self, u: np.ndarray, dt: float) -> float:
        return float(np.max(np.abs(u)) * dt / min(self.grid.dx, self.grid.dy))

    # ----------------------------------------------------------------- step
    def project(self, u_star: np.ndarray, u_in: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
        g = self.grid
        rhs = self.divergence(u_star, u_in) / dt
        if self.bc.p_out != 0.0:
            gb = g.gradient(np.zeros(g.n_cells), self.pressure_trace(np.zeros(g.n_cells)))
            rhs = rhs - self.D @ gb.T.ravel()
        if self.pinned:
            rhs[0] = 0.0
        p = self._lu.solve(rhs)
        res = np.linalg.norm(self.A @ p - rhs)
        scale = np.linalg.norm(rhs)
        if res > self.config.poisson_tol * max(scale, 1e-300) and res > 1e-13:
            raise FomError(f"pressure Poisson solve did not converge: residual {res:.3e} "
                           f"(rhs norm {scale:.3e})")
        u = u_star - dt * g.gradient(p, self.pressure_trace(p))
        return u, p

    def step(self, state: FomState, dt: float) -> FomState:
        cfl = self.cfl(state.u, dt)
        if cfl > self.config.cfl_max:
            raise FomError(f"CFL {cfl:.3f} exceeds {self.config.cfl_max} at t={state.t:.4g}")
        ub = self.velocity_trace(state.u, state.u_in)
        grad = self.grid.vector_gradient(state.u, ub)
        nu_t = self.eddy_viscosity(state.u, ub, grad)
        u_star = state.u + dt * self.momentum_rhs(state.u, ub, nu_t, grad)
        u, p = self.project(u_star, state.u_in, dt)
        div = np.max(np.abs(self.divergence(u, state.u_in)))
        ref = max(abs(state.u_in), np.max(np.abs(u)), 1e-12) / self.reference_length
        if div > self.config.div_tol * ref:
            raise FomError(f"divergence {div:.3e} after projection at t={state.t:.4g}")
        return FomState(u, p, nu_t, state.t + dt, state.u_in)

    @property
    def reference_length(self) -> float:
        return min(self.grid.nx * self.grid.dx, self.grid.ny * self.grid.dy)

    def initial_state(self, u_in: float) -> FomState:
        g = self.grid
        u = np.zeros((g.n_cells, 2))
        if self.config.initial == "uniform":
            u[:] = u_in * np.asarray(self.bc.inlet_direction)
        u, p = self.project(u, u_in, 1.0)
        ub = self.velocity_trace(u, u_in)
        return FomState(u, p, self.eddy_viscosity(u, ub), 0.0, u_in)

    def packed(self, state: FomState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g = self.grid
        ub = self.velocity_trace(state.u, state.u_in)
        nu_t = self.eddy_viscosity(state.u, ub)
        return (g.pack_vector(state.u, ub),
                g.pack_scalar(state.p, self.pressure_trace(state.p)),
                g.pack_scalar(nu_t))

    def lift(self, state: FomState) -> float:
        """Cross-stream force on the phase patch (outward normal of the body)."""
        su, spp, _ = self.packed(state)
        f = surface_force(self.grid, su, spp, self.config.phase_patch, self.config.nu,
                          normal_sign=-1.0)
        return float(f[1])

    def align_phase(self, state: FomState, dt: float) -> FomState:
        """Step until the lift crosses zero from below."""
        c = self.config
        prev = self.lift(state)
        for _ in range(int(np.ceil(c.phase_wait / dt))):
            state = self.step(state, dt)
            cur = self.lift(state)
            if prev < 0.0 <= cur:
                return state
            prev = cur
        raise FomError(f"mu={state.u_in:g}: no upward lift crossing on {c.phase_patch!r} "
                       f"within {c.phase_wait:g} time units")

    def run_sample(self, u_in: float, dt: float, capture: list | None = None):
        """Spin up and collect the snapshot columns of one parameter sample."""
        c = self.config
        state = self.initial_state(u_in)
        n_spin = int(round(c.spin_up / dt))
        for k in range(n_spin):
            new = self.step(state, dt)
            if c.steady_tol is not None:
                change = np.max(np.abs(new.u - state.u)) / dt
                if change < c.steady_tol:
                    state = new
                    log.info("mu=%g steady after %d steps", u_in, k + 1)
                    break
            state = new
        else:
            if c.steady_tol is not None and n_spin:
                log.warning("mu=%g not steady after spin-up (tol %g)", u_in, c.steady_tol)
        t0 = 0.0
        if c.phase_patch is not None:
            state = self.align_phase(state, dt)
            t0 = state.t
        cols_u, cols_p, cols_n, times = [], [], [], []
        for r in range(c.n_snapshots):
            if r > 0:
                for _ in range(c.save_every):
                    state = self.step(state, dt)
            su, spp, sn = self.packed(state)
            cols_u.append(su); cols_p.append(spp); cols_n.append(sn); times.append(state.t - t0)
            if capture is not None:
                capture.append(FomState(state.u.copy(), state.p.copy(), sn[:self.grid.n_cells].copy(),
                                        state.t, u_in))
        return cols_u, cols_p, cols_n, times, state


def generate_snapshots(config: FomConfig, capture: list | None = None) -> SnapshotArchive:
    """Run every parameter sample and assemble the snapshot archive.

    Columns are grouped by sample, then time.  ``capture`` (a list) receives
    the in-memory states at every save instant.
    """
    solver = FomSolver(config)
    us, ps, ns, index = [], [], [], []
    for mu, dt in zip(config.samples, config.dts):
        log.info("FOM sample mu=%g", mu)
        cu, cp, cn, times, _ = solver.run_sample(mu, dt, capture)
        us += cu; ps += cp; ns += cn
        index += [(mu, t) for t in times]
    dts = config.dts
    return SnapshotArchive(
        S_u=np.column_stack(us), S_p=np.column_stack(ps), S_nut=np.column_stack(ns),
        index=np.array(index, dtype=float),
        sample_dt=np.array([d * config.save_every for d in dts]),
        n_samples=len(config.samples), n_times=config.n_snapshots,
        grid=config.grid, boundary=config.boundary,
        U_bc=np.array([config.boundary.bc_values(m) for m in config.samples]),
        nu=config.nu,
    )


# ------------------------------------------------------------------ presets
def step_channel(nx: int = 64, ny: int = 32, length: float = 8.0, height: float = 2.0,
                 step_length: float = 1.0, step_height: float = 1.0):
    """Channel with a backward-facing step in the lower-left corner."""
    dx, dy = length / nx, height / ny
    si, sj = int(round(step_length / dx)), int(round(step_height / dy))
    grid = StructuredGrid(nx, ny, dx, dy,
                          sides=[SideSegment("left", "inlet"), SideSegment("right", "outlet"),
                                 SideSegment("bottom", "walls"), SideSegment("top", "walls")],
                          blocks=[Block("walls", 0, si, 0, sj)])
    bc = FlowBoundary({"inlet": "inlet", "outlet": "outlet", "walls": "wall"})
    return grid, bc


def square_obstacle(nx: int = 96, ny: int = 48, length: float = 6.0, height: float = 3.0,
                    center: tuple[float, float] = (1.5, 1.5), side: float = 0.5,
                    offset_cells: int = 1):
    """Channel with slip walls and an axis-aligned square obstacle.

    The square is shifted ``offset_cells`` upward from the centreline so that
    shedding starts without a perturbation.
    """
    dx, dy = length / nx, height / ny
    ni, nj = int(round(side / dx)), int(round(side / dy))
    i0 = int(round(center[0] / dx - ni / 2))
    j0 = int(round(center[1] / dy - nj / 2)) + offset_cells
    grid = StructuredGrid(nx, ny, dx, dy,
                          sides=[SideSegment("left", "inlet"), SideSegment("right", "outlet"),
                                 SideSegment("bottom", "bottom"), SideSegment("top", "top")],
                          blocks=[Block("obstacle", i0, i0 + ni, j0, j0 + nj)])
    bc = FlowBoundary({"inlet": "inlet", "outlet": "outlet", "bottom": "slip",
                       "top": "slip", "obstacle": "wall"})
    return grid, bc


def cavity(n: int = 16, size: float = 1.0):
    """Closed box with no-slip walls (decay tests)."""
    grid = StructuredGrid(n, n, size / n, size / n,
                          sides=[SideSegment(s, "walls") for s in StructuredGrid.SIDES])
    bc = FlowBoundary({"walls": "wall"}, scalar_bcs=[])
    return grid, bc
