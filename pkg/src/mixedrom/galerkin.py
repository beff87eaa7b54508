"""Reduced operators: projections of the grid stencils onto the POD spaces.

Velocity-indexed operators run over the extended trial set
``[phi_1..phi_Nu, s_1..s_NS, phi_L,1..phi_L,NBC]``: pure modes, supremizers
and (lifting mode only) lifting functions, whose coefficients are frozen to
the boundary values online.  Tensor layouts:

* ``C[i, j, k]   = (v_i, div(v_j (x) v_k))``, ``v_j`` carries the flux;
* ``CT1[l, i, k] = (v_i, eta_l lap v_k)``;
* ``CT2[l, i, k] = (v_i, div(eta_l grad(v_k)^T))``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .boundary import ScalarBC
from .grid import StructuredGrid


class OperatorError(ValueError):
    pass


# ---------------------------------------------------------------- helpers
def _vector_modes(grid: StructuredGrid, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unpack packed vector modes into ``(n_cells, 2, N)`` and ``(n_bfaces, 2, N)``."""
    if V.shape[0] != grid.n_vector_dofs:
        raise OperatorError(f"velocity basis has {V.shape[0]} rows, grid needs {grid.n_vector_dofs}")
    cells, trace = grid.unpack_vector(V)
    return cells, trace


def _scalar_modes(grid: StructuredGrid, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if X.shape[0] != grid.n_scalar_dofs:
        raise OperatorError(f"scalar basis has {X.shape[0]} rows, grid needs {grid.n_scalar_dofs}")
    return grid.unpack_scalar(X)


def _project(grid: StructuredGrid, U: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``(u_i, f_k)`` for stacks ``U (n, 2, N)`` and ``F (n, 2, K)``."""
    return np.einsum("cdi,c,cdk->ik", U, grid.cell_volumes, F, optimize=True)


def _per_mode(fn, U: np.ndarray, Ub: np.ndarray) -> np.ndarray:
    return np.stack([fn(U[:, :, k], Ub[:, :, k]) for k in range(U.shape[2])], axis=2) \
        if U.shape[2] else np.zeros(U.shape)


# -------------------------------------------------------------- operators
def assemble_linear(grid: StructuredGrid, V: np.ndarray, X: np.ndarray
                    ) -> tuple[np.ndarray, ...]:
    """Mass, Laplacian, transpose-gradient, pressure-gradient and divergence blocks.

    Returns ``M, B, BT, H, P`` with ``H (N x N_p)`` and ``P (N_p x N)``.
    """
    U, Ub = _vector_modes(grid, V)
    Xc, Xb = _scalar_modes(grid, X)
    lap = _per_mode(lambda u, ub: grid.laplacian(u, None, ub), U, Ub)
    dgt = _per_mode(lambda u, ub: grid.div_grad_transpose(u, ub), U, Ub)
    M = _project(grid, U, U)
    B = _project(grid, U, lap)
    BT = _project(grid, U, dgt)
    if X.shape[1]:
        grad = np.stack([grid.gradient(Xc[:, j], Xb[:, j]) for j in range(X.shape[1])], axis=2)
    else:
        grad = np.zeros((grid.n_cells, 2, 0))
    H = _project(grid, U, grad)
    div = np.stack([grid.divergence(U[:, :, k], Ub[:, :, k]) for k in range(U.shape[2])], axis=1) \
        if U.shape[2] else np.zeros((grid.n_cells, 0))
    P = Xc.T @ (grid.cell_volumes[:, None] * div)
    return 0.5 * (M + M.T), B, BT, H, P


def pressure_lifting_gradient(grid: StructuredGrid, V: np.ndarray, chi_c: np.ndarray) -> np.ndarray:
    """``(v_i, grad chi_c)`` for the pressure lifting function."""
    U, _ = _vector_modes(grid, V)
    c, b = grid.unpack_scalar(chi_c)
    return _project(grid, U, grid.gradient(c, b)[:, :, None])[:, 0]


def assemble_convection(grid: StructuredGrid, V: np.ndarray, scheme: str = "central") -> np.ndarray:
    """Convection tensor ``C[i, j, k] = (v_i, div(v_j (x) v_k))``."""
    U, Ub = _vector_modes(grid, V)
    n = U.shape[2]
    if scheme != "central":
        raise OperatorError("the reduced convection tensor is bilinear only for central faces")
    # central face values of every transported mode, flattened over (comp, k)
    wf = (0.5 * (U[grid.owner] + U[grid.neighbour])).reshape(len(grid.owner), 2 * n)
    wb = Ub.reshape(grid.n_bfaces, 2 * n)
    C = np.zeros((n, n, n))
    vol = grid.cell_volumes[:, None]
    for j in range(n):
        fi, fb = grid.face_flux(U[:, :, j], Ub[:, :, j])
        out = grid._scatter(fi[:, None] * wf, fb[:, None] * wb) / vol
        C[:, j, :] = _project(grid, U, out.reshape(grid.n_cells, 2, n))
    return C


def assemble_turbulence(grid: StructuredGrid, V: np.ndarray, ETA: np.ndarray
                        ) -> tuple[np.ndarray, np.ndarray]:
    """``CT1[l, i, k]`` and ``CT2[l, i, k]`` for viscosity fields ``ETA`` (packed columns)."""
    U, Ub = _vector_modes(grid, V)
    Ec, Eb = _scalar_modes(grid, ETA)
    n, m = U.shape[2], ETA.shape[1]
    lap = _per_mode(lambda u, ub: grid.laplacian(u, None, ub), U, Ub)
    # (v_i . lap v_k) per cell, then weighted by eta_l * volume
    pair = np.einsum("cdi,cdk->cik", U, lap, optimize=True).reshape(grid.n_cells, n * n)
    CT1 = ((Ec * grid.cell_volumes[:, None]).T @ pair).reshape(m, n, n)
    # face pieces of div(nu grad(v)^T): component m from d_m v_axis
    grads = np.stack([grid.vector_gradient(U[:, :, k], Ub[:, :, k]) for k in range(n)], axis=3) \
        if n else np.zeros((grid.n_cells, 2, 2, 0))
    ax, bax = grid.face_axis, grid.bface_axis
    # advanced indices split by a slice: result is (faces, m, N)
    gf = 0.5 * (grads[grid.owner, :, ax, :] + grads[grid.neighbour, :, ax, :])
    gb = grads[grid.bface_cell, :, bax, :]
    gf = (gf * grid.face_area[:, None, None]).reshape(len(ax), 2 * n)
    gb = (gb * (grid.bface_area * grid.bface_sign)[:, None, None]).reshape(grid.n_bfaces, 2 * n)
    CT2 = np.zeros((m, n, n))
    vol = grid.cell_volumes[:, None]
    for l in range(m):
        nu_i, nu_b = grid.interpolate_to_faces(Ec[:, l], Eb[:, l])
        out = grid._scatter(nu_i[:, None] * gf, nu_b[:, None] * gb) / vol
        CT2[l] = _project(grid, U, out.reshape(grid.n_cells, 2, n))
    return CT1, CT2


def assemble_penalty(grid: StructuredGrid, V: np.ndarray, scalar_bcs: list[ScalarBC]
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Boundary terms per scalar condition ``k``: ``D[k, i]`` and ``E[k, i, j]``.

    ``D`` integrates the prescribed component over the patch; ``E`` uses the
    full vector dot product of the mode traces.
    """
    _, Ub = _vector_modes(grid, V)
    n = Ub.shape[2]
    D = np.zeros((len(scalar_bcs), n))
    E = np.zeros((len(scalar_bcs), n, n))
    for k, bc in enumerate(scalar_bcs):
        faces = grid.patch(bc.patch).faces
        s = grid.bface_area[faces]
        tr = Ub[faces]
        D[k] = s @ tr[:, bc.comp, :]
        E[k] = np.einsum("f,fdi,fdj->ij", s, tr, tr)
    return D, E


def face_gradient(grid: StructuredGrid, u: np.ndarray, ub: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Gradient tensor ``T[f, m, k] = d_m u_k`` on boundary faces.

    The normal row is the one-sided difference to the trace; the tangential
    row comes from the adjacent cell gradient.
    """
    g = grid.vector_gradient(u, ub)[grid.bface_cell[faces]]
    ax, sign = grid.bface_axis[faces], grid.bface_sign[faces]
    dn = (ub[faces] - u[grid.bface_cell[faces]]) / grid.bface_dist[faces][:, None]
    g[np.arange(len(faces)), ax, :] = sign[:, None] * dn
    return g


def viscous_traction(grid: StructuredGrid, u: np.ndarray, ub: np.ndarray, patch: str,
                     mu: float, symmetric: bool = False, normal_sign: float = 1.0) -> np.ndarray:
    """``int 2 mu grad(u) n ds`` (or ``mu (grad u + grad u^T) n``) over a patch."""
    faces = grid.patch(patch).faces
    n = normal_sign * grid.bface_normals()[faces]
    s = grid.bface_area[faces]
    T = face_gradient(grid, u, ub, faces)
    # (grad u n)_k = sum_m d_m u_k n_m
    gn = np.einsum("fmk,fm->fk", T, n)
    if symmetric:
        gtn = np.einsum("fkm,fm->fk", T, n)
        return mu * (s @ (gn + gtn))
    return 2.0 * mu * (s @ gn)


def assemble_forces(grid: StructuredGrid, V: np.ndarray, X: np.ndarray, patch: str,
                    mu: float, symmetric: bool = False, normal_sign: float = 1.0
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Force contributions ``delta (N x 2)`` and ``theta (N_p x 2)`` on a patch.

    ``normal_sign=-1`` flips the grid's outward normal so that ``n`` points
    out of a solid body.
    """
    U, Ub = _vector_modes(grid, V)
    Xc, Xb = _scalar_modes(grid, X)
    delta = np.array([viscous_traction(grid, U[:, :, i], Ub[:, :, i], patch, mu,
                                       symmetric, normal_sign) for i in range(U.shape[2])])
    theta = np.array([normal_sign * grid.boundary_integral(Xb[:, j], patch)
                      for j in range(X.shape[1])])
    return delta.reshape(-1, 2), theta.reshape(-1, 2)


# ---------------------------------------------------------------- bundle
@dataclass
class ReducedOperators:
    """Operators at the stored (maximum) ranks.

    ``n_lift`` trailing velocity indices are lifting functions.  ``Hc`` and
    ``theta_c`` are the pressure-lifting contributions (zero if unused).
    """

    M: np.ndarray
    B: np.ndarray
    BT: np.ndarray
    H: np.ndarray
    P: np.ndarray
    C: np.ndarray
    CT1: np.ndarray
    CT2: np.ndarray
    CT1_mean: np.ndarray
    CT2_mean: np.ndarray
    D: np.ndarray
    E: np.ndarray
    delta: np.ndarray
    theta: np.ndarray
    Hc: np.ndarray
    theta_c: np.ndarray
    n_u: int
    n_s: int
    n_lift: int

    TENSORS = ("C", "CT1", "CT2", "CT1_mean", "CT2_mean", "E")
    SIZES = ("n_u", "n_s", "n_lift")

    def __post_init__(self):
        # fixed memory layout keeps reduced solves bit-identical across save/load
        for name in self.arrays():
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))

    @property
    def n(self) -> int:
        return self.n_u + self.n_s

    @property
    def n_p(self) -> int:
        return self.H.shape[1]

    @property
    def n_nut(self) -> int:
        return self.CT1.shape[0]

    @property
    def n_mean(self) -> int:
        return self.CT1_mean.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in self.SIZES}

    def check(self) -> None:
        for name, a in self.arrays().items():
            if not np.all(np.isfinite(a)):
                raise OperatorError(f"operator {name} has non-finite entries")
        n = self.n
        if n:
            lo = np.linalg.eigvalsh(self.M[:n, :n])[0]
            if lo <= 0.0:
                raise OperatorError(f"mass matrix is not positive definite (min eigenvalue {lo:.3e})")

    def truncated(self, n_u: int, n_s: int, n_p: int, n_nut: int) -> "ReducedOperators":
        """Slice to the requested mode counts; lifting columns are kept."""
        for name, want, have in (("N_u", n_u, self.n_u), ("N_S", n_s, self.n_s),
                                 ("N_p", n_p, self.n_p), ("N_nut", n_nut, self.n_nut)):
            if want < 0 or want > have:
                raise OperatorError(f"{name}={want} exceeds the stored rank {have}")
        v = np.concatenate([np.arange(n_u), self.n_u + np.arange(n_s),
                            self.n + np.arange(self.n_lift)]).astype(int)
        q = np.arange(n_p)
        g = np.arange(n_nut)
        ix = np.ix_
        return ReducedOperators(
            M=self.M[ix(v, v)], B=self.B[ix(v, v)], BT=self.BT[ix(v, v)],
            H=self.H[ix(v, q)], P=self.P[ix(q, v)],
            C=self.C[ix(v, v, v)], CT1=self.CT1[ix(g, v, v)], CT2=self.CT2[ix(g, v, v)],
            CT1_mean=self.CT1_mean[:, v][:, :, v], CT2_mean=self.CT2_mean[:, v][:, :, v],
            D=self.D[:, v], E=self.E[:, v][:, :, v], delta=self.delta[v], theta=self.theta[q],
            Hc=self.Hc[v], theta_c=self.theta_c, n_u=n_u, n_s=n_s, n_lift=self.n_lift)


def assemble_all(grid: StructuredGrid, basis, scalar_bcs: list[ScalarBC], nu: float,
                 force_patch: str | None = None, symmetric_strain: bool = False,
                 force_normal_sign: float = 1.0) -> ReducedOperators:
    """Every operator for a :class:`~mixedrom.pod.PodBasis`."""
    V = np.hstack([basis.velocity_space(), basis.lifting])
    X = basis.pressure
    M, B, BT, H, P = assemble_linear(grid, V, X)
    C = assemble_convection(grid, V)
    CT1, CT2 = assemble_turbulence(grid, V, basis.nut)
    CT1m, CT2m = assemble_turbulence(grid, V, basis.nut_mean)
    if basis.bc_mode == "penalty":
        D, E = assemble_penalty(grid, V, scalar_bcs)
    else:
        D, E = np.zeros((0, V.shape[1])), np.zeros((0, V.shape[1], V.shape[1]))
    if force_patch is not None:
        delta, theta = assemble_forces(grid, V, X, force_patch, nu, symmetric_strain,
                                       force_normal_sign)
    else:
        delta, theta = np.zeros((V.shape[1], 2)), np.zeros((X.shape[1], 2))
    if basis.chi_c is not None and basis.bc_mode == "lifting":
        Hc = pressure_lifting_gradient(grid, V, basis.chi_c)
        theta_c = (force_normal_sign * grid.boundary_integral(grid.unpack_scalar(basis.chi_c)[1],
                                                              force_patch)
                   if force_patch is not None else np.zeros(2))
    else:
        Hc, theta_c = np.zeros(V.shape[1]), np.zeros(2)
    ops = ReducedOperators(M, B, BT, H, P, C, CT1, CT2, CT1m, CT2m, D, E, delta, theta,
                           Hc, np.asarray(theta_c, dtype=float), basis.n_u, basis.n_s, basis.n_bc)
    ops.check()
    return ops
