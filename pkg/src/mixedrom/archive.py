"""Snapshot archive: the offline data set of one campaign."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import storage
from .boundary import FlowBoundary
from .grid import StructuredGrid


@dataclass
class SnapshotArchive:
    """Snapshot matrices plus the ``(mu, t)`` index set.

    Columns are packed fields (cell values followed by boundary traces, see
    :class:`~mixedrom.grid.StructuredGrid`) grouped by sample, then time.
    """

    S_u: np.ndarray
    S_p: np.ndarray
    S_nut: np.ndarray
    index: np.ndarray          # (N_s, 2): mu, t
    sample_dt: np.ndarray      # snapshot interval per sample
    n_samples: int
    n_times: int
    grid: StructuredGrid
    boundary: FlowBoundary
    U_bc: np.ndarray           # (M, N_BC)
    nu: float

    def __post_init__(self):
        ns = self.n_samples * self.n_times
        for name in ("S_u", "S_p", "S_nut"):
            a = getattr(self, name)
            if a.shape[1] != ns:
                raise ValueError(f"{name} has {a.shape[1]} columns, expected M*N_T = {ns}")
        if self.S_u.shape[0] != self.grid.n_vector_dofs:
            raise ValueError("velocity snapshots do not match the grid")
        if self.S_p.shape[0] != self.grid.n_scalar_dofs or self.S_nut.shape[0] != self.grid.n_scalar_dofs:
            raise ValueError("scalar snapshots do not match the grid")
        if self.index.shape != (ns, 2):
            raise ValueError("index set must have one (mu, t) pair per snapshot")

    @property
    def n_snapshots(self) -> int:
        return self.n_samples * self.n_times

    @property
    def mus(self) -> np.ndarray:
        return self.index[::self.n_times, 0].copy()

    def sample_columns(self, k: int) -> slice:
        return slice(k * self.n_times, (k + 1) * self.n_times)

    # ------------------------------------------------------------------ io
    FILES = {"S_u": "u.romf", "S_p": "p.romf", "S_nut": "nut.romf"}

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for attr, fname in self.FILES.items():
            storage.write_matrix(d / fname, getattr(self, attr))
        meta = {
            "grid": self.grid.describe(),
            "boundary": self.boundary.describe(),
            "nu": float(self.nu),
            "n_samples": self.n_samples,
            "n_times": self.n_times,
            "sample_dt": [float(x) for x in self.sample_dt],
        }
        for k in range(self.n_samples):
            meta[f"U_bc.{k}"] = [float(x) for x in self.U_bc[k]]
        for r, (mu, t) in enumerate(self.index):
            meta[f"x.{r}"] = [float(mu), float(t)]
        storage.write_kv(d / "meta.txt", meta, header="mixedrom snapshot archive")

    @classmethod
    def load(cls, directory: str | Path) -> "SnapshotArchive":
        d = Path(directory)
        meta = storage.read_kv(d / "meta.txt")
        grid = StructuredGrid.from_description(json.loads(meta["grid"]))
        boundary = FlowBoundary.from_description(json.loads(meta["boundary"]))
        m, nt = int(meta["n_samples"]), int(meta["n_times"])
        index = np.array([json.loads(meta[f"x.{r}"]) for r in range(m * nt)], dtype=float)
        U_bc = np.array([json.loads(meta[f"U_bc.{k}"]) for k in range(m)], dtype=float)
        U_bc = U_bc.reshape(m, -1)
        mats = {attr: storage.read_matrix(d / fname) for attr, fname in cls.FILES.items()}
        return cls(index=index, sample_dt=np.array(json.loads(meta["sample_dt"]), dtype=float),
                   n_samples=m, n_times=nt, grid=grid, boundary=boundary, U_bc=U_bc,
                   nu=float(meta["nu"]), **mats)
