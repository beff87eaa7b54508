"""Structured 2D finite-volume grid and Gauss-theorem operators.

Cells are laid out on a uniform orthogonal lattice; rectangular solid blocks
may be carved out (backward step, square obstacle).  Every boundary face of
the fluid region belongs to exactly one named patch.

Fields are plain numpy arrays: a scalar field is ``(n_cells,)``, a vector
field ``(n_cells, 2)``.  Boundary values ("traces") live in separate arrays
of shape ``(n_bfaces,)`` / ``(n_bfaces, 2)`` ordered like the boundary faces.
When a trace is omitted the operators extrapolate with zero normal gradient.

Snapshot vectors used by the reduction pipeline concatenate cell values and
traces (see :meth:`StructuredGrid.pack_scalar` / :meth:`pack_vector`), which
makes every operator a linear map of the stored vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Patch:
    name: str
    faces: np.ndarray  # indices into the boundary-face arrays

    def __len__(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class Block:
    """Solid rectangle in cell indices, ``[i0, i1) x [j0, j1)``."""

    name: str
    i0: int
    i1: int
    j0: int
    j1: int


@dataclass(frozen=True)
class SideSegment:
    """Portion of a domain side assigned to a patch.

    ``lo``/``hi`` are coordinates along the side (y for left/right, x for
    bottom/top).  Faces whose centre lies in ``[lo, hi]`` belong to ``name``.
    """

    side: str
    name: str
    lo: float = -np.inf
    hi: float = np.inf


class StructuredGrid:
    """Uniform orthogonal grid with optional solid blocks.

    Parameters
    ----------
    nx, ny : int
        Lattice cell counts.
    dx, dy : float
        Cell sizes.
    sides : list of SideSegment
        Patch assignment of the outer boundary.  Every face on the outer
        boundary of the fluid region must be covered.
    blocks : list of Block, optional
        Solid rectangles.  Their fluid-facing faces go to a patch named after
        the block.
    """

    SIDES = ("left", "right", "bottom", "top")

    def __init__(self, nx: int, ny: int, dx: float, dy: float,
                 sides: list[SideSegment] | None = None,
                 blocks: list[Block] | None = None):
        if nx < 1 or ny < 1:
            raise ValueError("nx and ny must be positive")
        if dx <= 0 or dy <= 0:
            raise ValueError("cell sizes must be positive")
        self.nx, self.ny = int(nx), int(ny)
        self.dx, self.dy = float(dx), float(dy)
        self.blocks = list(blocks or [])
        if sides is None:
            sides = [SideSegment(s, s) for s in self.SIDES]
        self.sides = list(sides)

        solid = np.zeros((nx, ny), dtype=bool)
        for b in self.blocks:
            solid[b.i0:b.i1, b.j0:b.j1] = True
        self.solid = solid
        # lattice -> cell number, -1 for solid; i runs fastest
        cell_id = -np.ones((nx, ny), dtype=np.int64)
        jj, ii = np.nonzero(~solid.T)
        cell_id[ii, jj] = np.arange(ii.size)
        self.cell_id = cell_id
        self.lattice_i = ii
        self.lattice_j = jj
        self.n_cells = int(ii.size)
        self.x = (ii + 0.5) * self.dx
        self.y = (jj + 0.5) * self.dy
        self.cell_volumes = np.full(self.n_cells, self.dx * self.dy)

        self._build_faces()

    # ------------------------------------------------------------------ setup
    def _build_faces(self) -> None:
        nx, ny, cid = self.nx, self.ny, self.cell_id
        own, nei, ax = [], [], []
        # x-normal interior faces between (i, j) and (i+1, j)
        a, b = cid[:-1, :], cid[1:, :]
        m = (a >= 0) & (b >= 0)
        own.append(a[m]); nei.append(b[m]); ax.append(np.zeros(m.sum(), int))
        a, b = cid[:, :-1], cid[:, 1:]
        m = (a >= 0) & (b >= 0)
        own.append(a[m]); nei.append(b[m]); ax.append(np.ones(m.sum(), int))
        self.owner = np.concatenate(own)
        self.neighbour = np.concatenate(nei)
        self.face_axis = np.concatenate(ax)
        order = np.lexsort((self.neighbour, self.owner))
        self.owner, self.neighbour, self.face_axis = (
            self.owner[order], self.neighbour[order], self.face_axis[order])
        h = np.array([self.dx, self.dy])
        area = np.array([self.dy, self.dx])
        self.face_area = area[self.face_axis]
        self.face_dist = h[self.face_axis]

        # boundary faces: (cell, axis, sign, position along side, patch name)
        bcell, baxis, bsign, bname = [], [], [], []

        def side_name(side: str, coord: float) -> str:
            for seg in self.sides:
                if seg.side == side and seg.lo <= coord <= seg.hi:
                    return seg.name
            raise ValueError(f"no patch covers {side} boundary at {coord:g}")

        block_at = {}
        for b in self.blocks:
            block_at.update({(i, j): b.name for i in range(b.i0, b.i1)
                             for j in range(b.j0, b.j1)})

        for c in range(self.n_cells):
            i, j = int(self.lattice_i[c]), int(self.lattice_j[c])
            for axis, sign, di, dj in ((0, -1, -1, 0), (0, 1, 1, 0),
                                       (1, -1, 0, -1), (1, 1, 0, 1)):
                ni, nj = i + di, j + dj
                if 0 <= ni < nx and 0 <= nj < ny:
                    if cid[ni, nj] >= 0:
                        continue
                    name = block_at[(ni, nj)]
                else:
                    if axis == 0:
                        side = "left" if sign < 0 else "right"
                        name = side_name(side, (j + 0.5) * self.dy)
                    else:
                        side = "bottom" if sign < 0 else "top"
                        name = side_name(side, (i + 0.5) * self.dx)
                bcell.append(c); baxis.append(axis); bsign.append(sign)
                bname.append(name)

        names = list(dict.fromkeys(bname))
        self.bface_cell = np.array(bcell, dtype=np.int64)
        self.bface_axis = np.array(baxis, dtype=np.int64)
        self.bface_sign = np.array(bsign, dtype=float)
        self.bface_area = area[self.bface_axis]
        self.bface_dist = 0.5 * h[self.bface_axis]
        self.n_bfaces = len(bcell)
        bname = np.array(bname)
        self.patches = {n: Patch(n, np.nonzero(bname == n)[0]) for n in names}
        self.bface_patch = np.array([names.index(n) for n in bname], dtype=int)
        nf, nb, n = len(self.owner), self.n_bfaces, self.n_cells
        self._fidx, self._bidx = np.arange(nf), np.arange(nb)
        self._face_to_cell = sp.csr_matrix(
            (np.concatenate([np.ones(nf), -np.ones(nf)]),
             (np.concatenate([self.owner, self.neighbour]), np.tile(self._fidx, 2))), shape=(n, nf))
        self._bface_to_cell = sp.csr_matrix((np.ones(nb), (self.bface_cell, self._bidx)), shape=(n, nb))
        # face-centre coordinates of boundary faces
        off = np.where(self.bface_axis == 0, self.bface_sign, 0.0)
        self.bface_x = self.x[self.bface_cell] + 0.5 * self.dx * off
        off = np.where(self.bface_axis == 1, self.bface_sign, 0.0)
        self.bface_y = self.y[self.bface_cell] + 0.5 * self.dy * off

    # ------------------------------------------------------------- geometry
    @property
    def patch_names(self) -> list[str]:
        return list(self.patches)

    def patch(self, name: str) -> Patch:
        try:
            return self.patches[name]
        except KeyError:
            raise KeyError(f"unknown patch {name!r}; known: {self.patch_names}") from None

    def bface_normals(self) -> np.ndarray:
        """Outward unit normals of the boundary faces, ``(n_bfaces, 2)``."""
        n = np.zeros((self.n_bfaces, 2))
        n[np.arange(self.n_bfaces), self.bface_axis] = self.bface_sign
        return n

    @property
    def n_scalar_dofs(self) -> int:
        return self.n_cells + self.n_bfaces

    @property
    def n_vector_dofs(self) -> int:
        return 2 * self.n_scalar_dofs

    # ------------------------------------------------------ packed layouts
    def pack_scalar(self, cells: np.ndarray, trace: np.ndarray | None = None) -> np.ndarray:
        if trace is None:
            trace = self.extrapolate(cells)
        return np.concatenate([cells, trace])

    def unpack_scalar(self, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vec = np.asarray(vec)
        if vec.shape[0] != self.n_scalar_dofs:
            raise ValueError(f"expected {self.n_scalar_dofs} scalar dofs, got {vec.shape[0]}")
        return vec[:self.n_cells], vec[self.n_cells:]

    def pack_vector(self, cells: np.ndarray, trace: np.ndarray | None = None) -> np.ndarray:
        if trace is None:
            trace = self.extrapolate(cells)
        return np.concatenate([cells[:, 0], trace[:, 0], cells[:, 1], trace[:, 1]])

    def unpack_vector(self, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vec = np.asarray(vec)
        if vec.shape[0] != self.n_vector_dofs:
            raise ValueError(f"expected {self.n_vector_dofs} vector dofs, got {vec.shape[0]}")
        blk = vec.reshape((2, self.n_scalar_dofs) + vec.shape[1:])
        cells = np.stack([blk[0, :self.n_cells], blk[1, :self.n_cells]], axis=1)
        trace = np.stack([blk[0, self.n_cells:], blk[1, self.n_cells:]], axis=1)
        return cells, trace

    def dof_weights(self, ncomp: int = 1) -> np.ndarray:
        """Quadrature weights of a packed vector: cell volumes, zero on traces."""
        w = np.concatenate([self.cell_volumes, np.zeros(self.n_bfaces)])
        return np.tile(w, ncomp)

    def extrapolate(self, cells: np.ndarray) -> np.ndarray:
        """Zero-normal-gradient trace of a cell field."""
        return np.asarray(cells)[self.bface_cell]

    def trace_from_patches(self, cells: np.ndarray, values: dict[str, object]) -> np.ndarray:
        """Trace with Dirichlet values on the listed patches, zero gradient elsewhere.

        ``values`` maps patch name to a scalar, a per-component tuple, or an
        array with one row per patch face.
        """
        trace = np.array(self.extrapolate(cells), dtype=float)
        for name, val in values.items():
            faces = self.patch(name).faces
            trace[faces] = val
        return trace

    # --------------------------------------------------------------- checks
    def _check_cells(self, f: np.ndarray, what: str = "field") -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.n_cells:
            raise ValueError(f"{what} has {f.shape[0]} cells, grid has {self.n_cells}")
        return f

    def _trace(self, f: np.ndarray, fb: np.ndarray | None) -> np.ndarray:
        if fb is None:
            return self.extrapolate(f)
        fb = np.asarray(fb, dtype=float)
        if fb.shape[0] != self.n_bfaces or fb.shape[1:] != f.shape[1:]:
            raise ValueError(f"trace shape {fb.shape} does not match {self.n_bfaces} boundary faces")
        return fb

    def _scatter(self, values_int: np.ndarray, values_b: np.ndarray) -> np.ndarray:
        """Sum face contributions into cells: +owner, -neighbour, +boundary cell."""
        return self._face_to_cell @ values_int + self._bface_to_cell @ values_b

    # ------------------------------------------------------------ operators
    def inner_product(self, f: np.ndarray, g: np.ndarray) -> float:
        """Volume-weighted L2 product of two cell fields (componentwise dot)."""
        f = self._check_cells(f)
        g = self._check_cells(g)
        if f.shape != g.shape:
            raise ValueError(f"shape mismatch {f.shape} vs {g.shape}")
        prod = f * g if f.ndim == 1 else np.sum(f * g, axis=1)
        return float(np.dot(self.cell_volumes, prod))

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(self.inner_product(f, f)))

    def gradient(self, p: np.ndarray, pb: np.ndarray | None = None) -> np.ndarray:
        """Gauss gradient with central face interpolation, ``(n_cells, 2)``."""
        p = self._check_cells(p)
        pb = self._trace(p, pb)
        vi = np.zeros((len(self.owner), 2))
        vi[self._fidx, self.face_axis] = 0.5 * (p[self.owner] + p[self.neighbour]) * self.face_area
        vb = np.zeros((self.n_bfaces, 2))
        vb[self._bidx, self.bface_axis] = self.bface_sign * self.bface_area * pb
        return self._scatter(vi, vb) / self.cell_volumes[:, None]

    def face_flux(self, u: np.ndarray, ub: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Volumetric fluxes ``S_f . u_f`` on interior (owner->neighbour) and boundary (outward) faces."""
        u = self._check_cells(u)
        ub = self._trace(u, ub)
        ax = self.face_axis
        fi = 0.5 * (u[self.owner, ax] + u[self.neighbour, ax]) * self.face_area
        fb = self.bface_sign * self.bface_area * ub[np.arange(self.n_bfaces), self.bface_axis]
        return fi, fb

    def divergence(self, u: np.ndarray, ub: np.ndarray | None = None) -> np.ndarray:
        """Gauss divergence of a vector field with central face interpolation."""
        fi, fb = self.face_flux(u, ub)
        return self._scatter(fi, fb) / self.cell_volumes

    def _face_coefficient(self, nu) -> tuple[np.ndarray, np.ndarray]:
        if nu is None:
            return np.ones(len(self.owner)), np.ones(self.n_bfaces)
        if np.isscalar(nu):
            return np.full(len(self.owner), float(nu)), np.full(self.n_bfaces, float(nu))
        nu_i, nu_b = nu
        return np.asarray(nu_i, dtype=float), np.asarray(nu_b, dtype=float)

    def interpolate_to_faces(self, f: np.ndarray, fb: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Central face values of a cell scalar; boundary faces take the trace."""
        f = self._check_cells(f)
        return 0.5 * (f[self.owner] + f[self.neighbour]), self._trace(f, fb)

    def laplacian(self, u: np.ndarray, nu=None, ub: np.ndarray | None = None) -> np.ndarray:
        """Compact-stencil ``div(nu grad u)``.

        ``nu`` is None (unit), a scalar, or a pair ``(interior_faces,
        boundary_faces)`` of per-face coefficients.  Boundary faces use the
        trace with the half-cell distance, so a zero-gradient trace gives no
        flux.
        """
        u = self._check_cells(u)
        ub = self._trace(u, ub)
        nu_i, nu_b = self._face_coefficient(nu)
        ci = nu_i * self.face_area / self.face_dist
        cb = nu_b * self.bface_area / self.bface_dist
        if u.ndim == 2:
            ci, cb = ci[:, None], cb[:, None]
        fi = ci * (u[self.neighbour] - u[self.owner])
        fb = cb * (ub - u[self.bface_cell])
        out = self._scatter(fi, fb)
        vol = self.cell_volumes if u.ndim == 1 else self.cell_volumes[:, None]
        return out / vol

    def laplacian_matrix(self, dirichlet: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse unit Laplacian for a scalar with Dirichlet faces ``dirichlet``.

        Returns ``(A, B)`` with ``laplacian(u, ub=trace) == A @ u + B @ values``
        where the trace holds ``values`` on Dirichlet faces and extrapolates
        elsewhere.
        """
        dirichlet = np.asarray(dirichlet, dtype=bool)
        n, o, nb = self.n_cells, self.owner, self.neighbour
        ci = self.face_area / self.face_dist
        cb = (self.bface_area / self.bface_dist)[dirichlet]
        bc = self.bface_cell[dirichlet]
        rows = np.concatenate([o, o, nb, nb, bc])
        cols = np.concatenate([o, nb, nb, o, bc])
        vals = np.concatenate([-ci, ci, -ci, ci, -cb])
        inv_v = sp.diags(1.0 / self.cell_volumes)
        A = inv_v @ sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        B = inv_v @ sp.coo_matrix((cb, (bc, np.flatnonzero(dirichlet))),
                                  shape=(n, self.n_bfaces)).tocsr()
        return A.tocsr(), B.tocsr()

    def vector_gradient(self, u: np.ndarray, ub: np.ndarray | None = None) -> np.ndarray:
        """Cell gradient tensor ``G[c, m, k] = d u_k / d x_m``."""
        u = self._check_cells(u)
        ub = self._trace(u, ub)
        return np.stack([self.gradient(u[:, k], ub[:, k]) for k in (0, 1)], axis=2)

    def div_grad_transpose(self, u: np.ndarray, ub: np.ndarray | None = None,
                           nu: np.ndarray | None = None, nub: np.ndarray | None = None,
                           grad: np.ndarray | None = None) -> np.ndarray:
        """``div(nu (grad u)^T)`` with face tensors from averaged cell gradients.

        ``nu`` is a cell scalar (unit when None); boundary faces use ``nub``
        (zero-gradient extrapolation when None) and the adjacent cell's
        gradient tensor.  ``grad`` may pass a precomputed
        :meth:`vector_gradient`.
        """
        u = self._check_cells(u)
        ub = self._trace(u, ub)
        g = self.vector_gradient(u, ub) if grad is None else grad
        if nu is None:
            nu_i, nu_b = np.ones(len(self.owner)), np.ones(self.n_bfaces)
        else:
            nu_i, nu_b = self.interpolate_to_faces(nu, nub)
        ax, bax = self.face_axis, self.bface_axis
        # (S n)_k T_km with T = nu (grad u)^T  ->  component m: S nu d_m u_axis
        gf = 0.5 * (g[self.owner, :, ax] + g[self.neighbour, :, ax])
        fi = (nu_i * self.face_area)[:, None] * gf
        gb = g[self.bface_cell, :, bax]
        fb = (nu_b * self.bface_area * self.bface_sign)[:, None] * gb
        return self._scatter(fi, fb) / self.cell_volumes[:, None]

    def convection(self, carrier: np.ndarray, carrier_b: np.ndarray | None,
                   w: np.ndarray, wb: np.ndarray | None = None,
                   scheme: str = "central") -> np.ndarray:
        """Gauss form of ``div(carrier (x) w)``; flux from ``carrier``, face value of ``w``."""
        fi, fb = self.face_flux(carrier, carrier_b)
        w = self._check_cells(w)
        wb = self._trace(w, wb)
        if scheme == "central":
            wf = 0.5 * (w[self.owner] + w[self.neighbour])
        elif scheme == "upwind":
            up = fi >= 0
            if w.ndim == 2:
                up = up[:, None]
            wf = np.where(up, w[self.owner], w[self.neighbour])
        else:
            raise ValueError(f"unknown convection scheme {scheme!r}")
        if w.ndim == 2:
            vi, vb = fi[:, None] * wf, fb[:, None] * wb
            vol = self.cell_volumes[:, None]
        else:
            vi, vb = fi * wf, fb * wb
            vol = self.cell_volumes
        return self._scatter(vi, vb) / vol

    # ---------------------------------------------------- boundary integrals
    def boundary_integral(self, values: np.ndarray, patch: str | list[str],
                          times_normal: bool = True) -> np.ndarray | float:
        """Integrate per-face values over one or more patches.

        With ``times_normal`` a scalar trace ``chi`` returns ``sum chi n |S|``
        (a 2-vector); otherwise ``sum values |S|`` (scalar or per component).
        """
        names = [patch] if isinstance(patch, str) else list(patch)
        faces = np.concatenate([self.patch(n).faces for n in names])
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_bfaces:
            raise ValueError(f"expected {self.n_bfaces} face values, got {values.shape[0]}")
        v = values[faces]
        s = self.bface_area[faces]
        if times_normal:
            n = self.bface_normals()[faces]
            if v.ndim != 1:
                raise ValueError("normal integral needs a scalar trace")
            return (v * s) @ n
        out = np.tensordot(s, v, axes=(0, 0))
        return float(out) if np.ndim(out) == 0 else out

    def boundary_product(self, f: np.ndarray, g: np.ndarray, patch: str | list[str]) -> float:
        """``(f, g)`` over a patch with componentwise dot for vector traces."""
        names = [patch] if isinstance(patch, str) else list(patch)
        faces = np.concatenate([self.patch(n).faces for n in names])
        f = np.asarray(f, dtype=float)[faces]
        g = np.asarray(g, dtype=float)[faces]
        prod = f * g if f.ndim == 1 else np.sum(f * g, axis=1)
        return float(np.dot(self.bface_area[faces], prod))

    def normal_derivative(self, u: np.ndarray, ub: np.ndarray | None = None) -> np.ndarray:
        """One-sided outward normal derivative on every boundary face."""
        u = self._check_cells(u)
        ub = self._trace(u, ub)
        d = self.bface_dist if u.ndim == 1 else self.bface_dist[:, None]
        return (ub - u[self.bface_cell]) / d

    # ---------------------------------------------------------------- misc
    def describe(self) -> dict:
        return {
            "nx": self.nx, "ny": self.ny, "dx": self.dx, "dy": self.dy,
            "blocks": [(b.name, b.i0, b.i1, b.j0, b.j1) for b in self.blocks],
            "sides": [(s.side, s.name, s.lo, s.hi) for s in self.sides],
        }

    @classmethod
    def from_description(cls, d: dict) -> "StructuredGrid":
        return cls(d["nx"], d["ny"], d["dx"], d["dy"],
                   sides=[SideSegment(*s) for s in d["sides"]],
                   blocks=[Block(*b) for b in d["blocks"]])


def rectangle(nx: int, ny: int, dx: float = 1.0, dy: float = 1.0) -> StructuredGrid:
    """Plain rectangle with one patch per side."""
    return StructuredGrid(nx, ny, dx, dy)
