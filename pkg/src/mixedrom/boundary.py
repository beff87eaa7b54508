"""Per-patch flow boundary conditions and the trace rules derived from them.

Patch kinds
-----------
inlet   velocity Dirichlet (``U_in * direction``), pressure zero gradient
wall    velocity Dirichlet zero (no slip), pressure zero gradient
slip    normal velocity zero, tangential zero gradient, pressure zero gradient
outlet  velocity zero gradient, pressure Dirichlet ``p_out``

The pairing (velocity Dirichlet <-> pressure Neumann, and vice versa) makes
the discrete divergence the negative adjoint of the discrete gradient under
the volume-weighted product, which the projection step and the supremizers
rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import StructuredGrid

KINDS = ("inlet", "wall", "slip", "outlet")


@dataclass(frozen=True)
class ScalarBC:
    """One scalar velocity boundary condition: component ``comp`` on ``patch``.

    Its online value is ``scale * mu`` for inflow parameter ``mu``.
    """

    patch: str
    comp: int
    scale: float = 1.0

    @property
    def label(self) -> str:
        return f"{self.patch}:{'xy'[self.comp]}"


@dataclass
class FlowBoundary:
    kinds: dict[str, str]
    inlet_direction: tuple[float, float] = (1.0, 0.0)
    p_out: float = 0.0
    scalar_bcs: list[ScalarBC] = field(default_factory=list)

    def __post_init__(self):
        for name, kind in self.kinds.items():
            if kind not in KINDS:
                raise ValueError(f"patch {name!r}: unknown kind {kind!r}")
        if not self.scalar_bcs:
            self.scalar_bcs = [ScalarBC(p, c, float(self.inlet_direction[c]))
                               for p, k in self.kinds.items() if k == "inlet"
                               for c in (0, 1) if self.inlet_direction[c] != 0.0]

    def validate(self, grid: StructuredGrid) -> None:
        missing = set(grid.patch_names) - set(self.kinds)
        if missing:
            raise ValueError(f"no boundary condition for patches {sorted(missing)}")
        unknown = set(self.kinds) - set(grid.patch_names)
        if unknown:
            raise ValueError(f"boundary conditions for unknown patches {sorted(unknown)}")

    def patches_of(self, *kinds: str) -> list[str]:
        return [p for p, k in self.kinds.items() if k in kinds]

    # ---------------------------------------------------------------- masks
    def velocity_dirichlet_mask(self, grid: StructuredGrid) -> np.ndarray:
        """``(n_bfaces, 2)`` True where a velocity component is prescribed."""
        mask = np.zeros((grid.n_bfaces, 2), dtype=bool)
        for name, kind in self.kinds.items():
            faces = grid.patch(name).faces
            if kind in ("inlet", "wall"):
                mask[faces] = True
            elif kind == "slip":
                mask[faces, grid.bface_axis[faces]] = True
        return mask

    def pressure_dirichlet_mask(self, grid: StructuredGrid) -> np.ndarray:
        mask = np.zeros(grid.n_bfaces, dtype=bool)
        for name in self.patches_of("outlet"):
            mask[grid.patch(name).faces] = True
        return mask

    def dirichlet_patches(self, grid: StructuredGrid, comp: int) -> list[str]:
        """Patches on which velocity component ``comp`` is prescribed."""
        mask = self.velocity_dirichlet_mask(grid)[:, comp]
        return [n for n in self.kinds if mask[grid.patch(n).faces].any()]

    # --------------------------------------------------------------- traces
    def velocity_values(self, grid: StructuredGrid, u_in: float) -> np.ndarray:
        """Prescribed velocity on every face (meaningful where the mask is set)."""
        vals = np.zeros((grid.n_bfaces, 2))
        d = np.asarray(self.inlet_direction, dtype=float)
        for name in self.patches_of("inlet"):
            vals[grid.patch(name).faces] = u_in * d
        return vals

    def velocity_trace(self, grid: StructuredGrid, u: np.ndarray, u_in: float,
                       homogeneous: bool = False) -> np.ndarray:
        mask = self.velocity_dirichlet_mask(grid)
        trace = grid.extrapolate(u).astype(float)
        vals = 0.0 if homogeneous else self.velocity_values(grid, u_in)
        return np.where(mask, vals, trace)

    def pressure_trace(self, grid: StructuredGrid, p: np.ndarray,
                       homogeneous: bool = False) -> np.ndarray:
        mask = self.pressure_dirichlet_mask(grid)
        trace = grid.extrapolate(p).astype(float)
        return np.where(mask, 0.0 if homogeneous else self.p_out, trace)

    def bc_values(self, u_in: float) -> np.ndarray:
        """``U_BC`` vector for inflow parameter ``u_in``."""
        return np.array([bc.scale * u_in for bc in self.scalar_bcs])

    # ---------------------------------------------------------- (de)serial
    def describe(self) -> dict:
        return {"kinds": dict(self.kinds), "inlet_direction": list(self.inlet_direction),
                "p_out": self.p_out,
                "scalar_bcs": [(b.patch, b.comp, b.scale) for b in self.scalar_bcs]}

    @classmethod
    def from_description(cls, d: dict) -> "FlowBoundary":
        return cls(dict(d["kinds"]), tuple(d["inlet_direction"]), float(d["p_out"]),
                   [ScalarBC(p, int(c), float(s)) for p, c, s in d["scalar_bcs"]])
