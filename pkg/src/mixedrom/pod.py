"""Snapshot compression: lifting, correlation matrices, POD modes, supremizers.

All snapshots and modes are packed vectors (cell values followed by boundary
traces).  Inner products weight cells by volume and ignore traces, so the
traces of a mode are simply the same linear combination of snapshot traces.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import spsolve

from .archive import SnapshotArchive
from .boundary import FlowBoundary
from .grid import StructuredGrid
from .jacobi import jacobi_eigh

log = logging.getLogger(__name__)

RANK_TOL = 1e-12


class PodError(ValueError):
    pass


# ------------------------------------------------------------------ lifting
def _solve_laplace(grid: StructuredGrid, dirichlet: np.ndarray, values: np.ndarray,
                   tol: float = 1e-10) -> np.ndarray:
    """Cell values of ``lap u = 0``; ``values`` (one per boundary face) is used on Dirichlet faces."""
    A, B = grid.laplacian_matrix(dirichlet)
    rhs = -(B @ np.where(dirichlet, values, 0.0))
    u = spsolve(A.tocsc(), rhs)
    res = np.linalg.norm(A @ u - rhs)
    if not np.all(np.isfinite(u)) or res > tol * max(np.linalg.norm(rhs), 1.0):
        raise PodError(f"lifting Laplace solve failed (residual {res:.3e})")
    return u


def build_lifting_functions(grid: StructuredGrid, boundary: FlowBoundary
                            ) -> tuple[np.ndarray, np.ndarray | None]:
    """Lifting functions, one packed vector column per scalar boundary condition.

    Column ``k`` (component ``i`` on patch ``j``) is harmonic, equals 1 on
    the faces of ``j`` where component ``i`` is prescribed, 0 on the other
    faces where it is prescribed, and has zero normal gradient elsewhere.
    The other component is zero.  ``chi_c`` is the pressure analogue with
    value 1 on the pressure-Dirichlet faces (None without such faces).
    """
    if not boundary.scalar_bcs:
        raise PodError("lifting needs at least one Dirichlet boundary condition")
    vmask = boundary.velocity_dirichlet_mask(grid)
    cols = []
    for bc in boundary.scalar_bcs:
        mask = vmask[:, bc.comp]
        values = np.zeros(grid.n_bfaces)
        values[grid.patch(bc.patch).faces] = 1.0
        values[~mask] = 0.0
        if not values.any():
            raise PodError(f"component {bc.comp} is not prescribed on patch {bc.patch!r}")
        cells = _solve_laplace(grid, mask, values)
        trace = np.where(mask, values, grid.extrapolate(cells))
        u = np.zeros((grid.n_cells, 2))
        ub = np.zeros((grid.n_bfaces, 2))
        u[:, bc.comp], ub[:, bc.comp] = cells, trace
        cols.append(grid.pack_vector(u, ub))
    phi_l = np.column_stack(cols)
    pmask = boundary.pressure_dirichlet_mask(grid)
    chi_c = None
    if pmask.any():
        cells = _solve_laplace(grid, pmask, np.ones(grid.n_bfaces))
        chi_c = grid.pack_scalar(cells, np.where(pmask, 1.0, grid.extrapolate(cells)))
    return phi_l, chi_c


def homogenize(S_u: np.ndarray, S_p: np.ndarray, phi_l: np.ndarray, chi_c: np.ndarray | None,
               U_bc: np.ndarray, n_times: int, p_out: float = 0.0
               ) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the lifting part from every snapshot column.

    ``U_bc`` has one row per sample; columns are grouped by sample.
    """
    U_bc = np.atleast_2d(np.asarray(U_bc, dtype=float))
    if U_bc.shape[1] != phi_l.shape[1]:
        raise PodError(f"U_BC has {U_bc.shape[1]} entries, lifting has {phi_l.shape[1]} columns")
    if U_bc.shape[0] * n_times != S_u.shape[1]:
        raise PodError("U_BC rows do not match the snapshot grouping")
    per_col = np.repeat(U_bc, n_times, axis=0)
    U = S_u - phi_l @ per_col.T
    P = S_p.copy()
    if chi_c is not None and p_out != 0.0:
        P -= p_out * chi_c[:, None]
    return U, P


# ---------------------------------------------------------------------- POD
def correlation_matrix(S: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``C_ij = (s_i, s_j)`` under the diagonal weights of the packed layout."""
    S = np.asarray(S, dtype=float)
    if weights.shape[0] != S.shape[0]:
        raise PodError(f"weights have {weights.shape[0]} rows, snapshots {S.shape[0]}")
    C = S.T @ (weights[:, None] * S)
    return 0.5 * (C + C.T)


def eigendecompose(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs sorted descending; round-off negatives clipped to zero."""
    lam, V = jacobi_eigh(C)
    return np.clip(lam, 0.0, None), V


def numerical_rank(lam: np.ndarray, tol: float = RANK_TOL) -> int:
    if lam.size == 0 or lam[0] <= 0.0:
        return 0
    return int(np.sum(lam > tol * lam[0]))


def _orthonormalize(modes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Two passes of weighted modified Gram-Schmidt (keeps span and order)."""
    Q = modes.copy()
    for _ in range(2):
        for i in range(Q.shape[1]):
            for j in range(i):
                Q[:, i] -= np.dot(weights * Q[:, j], Q[:, i]) * Q[:, j]
            Q[:, i] /= np.sqrt(np.dot(weights * Q[:, i], Q[:, i]))
    return Q


def compute_modes(S: np.ndarray, lam: np.ndarray, V: np.ndarray, n_keep: int | None,
                  weights: np.ndarray) -> np.ndarray:
    """POD modes ``sum_j s_j V_ji``, renormalized to unit norm.

    The combination is followed by a weighted Gram-Schmidt pass: modes with
    eigenvalues near the rank cutoff lose orthogonality to round-off
    otherwise.
    """
    rank = numerical_rank(lam)
    if n_keep is None:
        n_keep = rank
    if n_keep > rank:
        raise PodError(f"requested {n_keep} modes but the numerical rank is {rank}")
    if n_keep == 0:
        return np.zeros((S.shape[0], 0))
    modes = S @ V[:, :n_keep] / (S.shape[1] * lam[:n_keep])
    norms = np.sqrt(np.einsum("ij,i,ij->j", modes, weights, modes))
    return _orthonormalize(modes / norms, weights)


def pod(S: np.ndarray, weights: np.ndarray, n_keep: int | None = None
        ) -> tuple[np.ndarray, np.ndarray]:
    """Modes and the full eigenvalue spectrum of a snapshot matrix."""
    lam, V = eigendecompose(correlation_matrix(S, weights))
    return compute_modes(S, lam, V, n_keep, weights), lam


def cumulative_energy(lam: np.ndarray) -> np.ndarray:
    total = np.sum(lam)
    if total <= 0.0:
        return np.ones_like(lam)
    return np.minimum(np.cumsum(lam) / total, 1.0)


def supremizer_modes(chi: np.ndarray, grid: StructuredGrid, boundary: FlowBoundary,
                     tol: float = 1e-10) -> np.ndarray:
    """Velocity-space enrichment ``s_i = -grad(chi_i) / ||grad(chi_i)||``.

    The sign makes ``(chi_i, div s_i)`` positive.  Traces follow the
    homogeneous velocity rule: zero where velocity is prescribed,
    extrapolated elsewhere.
    """
    cols = []
    for i in range(chi.shape[1]):
        cells, trace = grid.unpack_scalar(chi[:, i])
        g = -grid.gradient(cells, trace)
        gnorm = grid.norm(g)
        scale = grid.norm(cells) / min(grid.nx * grid.dx, grid.ny * grid.dy)
        if gnorm <= tol * max(scale, 1e-300):
            raise PodError(f"pressure mode {i} has zero gradient; constant pressure "
                           "modes must be excluded before building supremizers")
        g /= gnorm
        cols.append(grid.pack_vector(g, boundary.velocity_trace(grid, g, 0.0, homogeneous=True)))
    if not cols:
        return np.zeros((grid.n_vector_dofs, 0))
    return np.column_stack(cols)


def mean_viscosity_fields(S_nut: np.ndarray, n_samples: int, n_times: int
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample time means and the fluctuation snapshots."""
    if S_nut.shape[1] != n_samples * n_times:
        raise PodError("snapshot count is not n_samples * n_times")
    blocks = S_nut.reshape(S_nut.shape[0], n_samples, n_times)
    means = blocks.mean(axis=2)
    fluct = (blocks - means[:, :, None]).reshape(S_nut.shape)
    return means, fluct


# -------------------------------------------------------------------- basis
@dataclass
class PodBasis:
    """All reduced spaces of one model.

    ``velocity`` holds the pure velocity modes, ``supremizers`` the
    enrichment, ``lifting`` one column per scalar boundary condition (empty
    in penalty mode).  ``nut_mean`` is empty unless the mean/fluctuation
    split is active.
    """

    velocity: np.ndarray
    supremizers: np.ndarray
    pressure: np.ndarray
    nut: np.ndarray
    nut_mean: np.ndarray
    lam_u: np.ndarray
    lam_p: np.ndarray
    lam_nut: np.ndarray
    lifting: np.ndarray
    chi_c: np.ndarray | None
    bc_mode: str = "penalty"
    ranks: dict = field(default_factory=dict)

    @property
    def n_u(self) -> int:
        return self.velocity.shape[1]

    @property
    def n_s(self) -> int:
        return self.supremizers.shape[1]

    @property
    def n_p(self) -> int:
        return self.pressure.shape[1]

    @property
    def n_nut(self) -> int:
        return self.nut.shape[1]

    @property
    def n_bc(self) -> int:
        return self.lifting.shape[1]

    @property
    def nut_split(self) -> bool:
        return self.nut_mean.shape[1] > 0

    def velocity_space(self) -> np.ndarray:
        """``[phi, s]``: the N = N_u + N_S velocity trial functions."""
        return np.hstack([self.velocity, self.supremizers])

    def truncated(self, n_u: int, n_s: int, n_p: int, n_nut: int) -> "PodBasis":
        for name, want, have in (("N_u", n_u, self.n_u), ("N_S", n_s, self.n_s),
                                 ("N_p", n_p, self.n_p), ("N_nut", n_nut, self.n_nut)):
            if want < 0 or want > have:
                raise PodError(f"{name}={want} exceeds the stored rank {have}")
        return PodBasis(self.velocity[:, :n_u], self.supremizers[:, :n_s],
                        self.pressure[:, :n_p], self.nut[:, :n_nut], self.nut_mean,
                        self.lam_u, self.lam_p, self.lam_nut, self.lifting, self.chi_c,
                        self.bc_mode, dict(self.ranks))


def build_basis(archive: SnapshotArchive, n_u: int | None = None, n_p: int | None = None,
                n_nut: int | None = None, n_s: int | None = None, bc_mode: str = "penalty",
                nut_split: bool = False) -> PodBasis:
    """Run the full compression of an archive.

    Mode counts default to the numerical ranks; ``n_s`` defaults to the
    number of pressure modes.
    """
    if bc_mode not in ("penalty", "lifting"):
        raise PodError(f"unknown boundary mode {bc_mode!r}")
    grid, bnd = archive.grid, archive.boundary
    wv, ws = grid.dof_weights(2), grid.dof_weights(1)
    S_u, S_p = archive.S_u, archive.S_p
    if bc_mode == "lifting":
        phi_l, chi_c = build_lifting_functions(grid, bnd)
        S_u, S_p = homogenize(S_u, S_p, phi_l, chi_c, archive.U_bc, archive.n_times, bnd.p_out)
    else:
        phi_l, chi_c = np.zeros((grid.n_vector_dofs, 0)), None
    phi, lam_u = pod(S_u, wv, n_u)
    chi, lam_p = pod(S_p, ws, n_p)
    if nut_split:
        if archive.n_times < 2:
            raise PodError("the mean/fluctuation split needs several snapshots per sample")
        means, S_n = mean_viscosity_fields(archive.S_nut, archive.n_samples, archive.n_times)
    else:
        means, S_n = np.zeros((grid.n_scalar_dofs, 0)), archive.S_nut
    eta, lam_n = pod(S_n, ws, n_nut)
    if n_s is None:
        n_s = chi.shape[1]
    if n_s > chi.shape[1]:
        raise PodError(f"N_S={n_s} exceeds the number of pressure modes {chi.shape[1]}")
    sup = supremizer_modes(chi[:, :n_s], grid, bnd)
    ranks = {"u": numerical_rank(lam_u), "p": numerical_rank(lam_p), "nut": numerical_rank(lam_n)}
    log.info("POD ranks %s; kept N_u=%d N_p=%d N_nut=%d N_S=%d", ranks, phi.shape[1],
             chi.shape[1], eta.shape[1], n_s)
    return PodBasis(phi, sup, chi, eta, means, lam_u, lam_p, lam_n, phi_l, chi_c, bc_mode, ranks)
