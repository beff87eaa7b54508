"""Offline training pipeline and the on-disk model directory.

A model directory holds one ROMF matrix file per array plus ``model.txt``,
a ``key = value`` manifest listing sizes, settings and a sha256 checksum
for every file.  Nothing time-dependent is written, so identical inputs
produce byte-identical directories.
"""
from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import storage
from .archive import SnapshotArchive
from .boundary import FlowBoundary
from .galerkin import ReducedOperators, assemble_all
from .grid import StructuredGrid
from .pod import PodBasis, build_basis, homogenize, mean_viscosity_fields
from .rbf import RbfInterpolant, build_training_table, fit, projection_coefficients
from .rom import ReducedModel

log = logging.getLogger(__name__)

FORMAT = "mixedrom-model 1"


class ModelError(RuntimeError):
    pass


@dataclass
class OfflineSettings:
    """Offline choices.  Mode counts of ``None`` keep the numerical rank."""

    bc_mode: str = "penalty"
    nut_split: bool = False
    n_u: int | None = None
    n_p: int | None = None
    n_nut: int | None = None
    n_s: int | None = None
    gamma: float | None = None
    ridge: float = 1e-10
    force_patch: str | None = None
    force_normal_sign: float = -1.0
    symmetric_strain: bool = False


@dataclass
class TrainedModel:
    grid: StructuredGrid
    boundary: FlowBoundary
    basis: PodBasis
    rom: ReducedModel
    settings: OfflineSettings

    def truncated(self, options) -> "TrainedModel":
        rom = self.rom.truncated(options)
        o = rom.ops
        basis = self.basis.truncated(o.n_u, o.n_s, o.n_p, o.n_nut)
        return TrainedModel(self.grid, self.boundary, basis, rom, self.settings)


def training_coefficients(archive: SnapshotArchive, basis: PodBasis
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projection coefficients of every snapshot onto the pure modes."""
    grid = archive.grid
    S_u, S_p = archive.S_u, archive.S_p
    if basis.bc_mode == "lifting":
        S_u, S_p = homogenize(S_u, S_p, basis.lifting, basis.chi_c, archive.U_bc,
                              archive.n_times, archive.boundary.p_out)
    S_n = archive.S_nut
    if basis.nut_split:
        _, S_n = mean_viscosity_fields(S_n, archive.n_samples, archive.n_times)
    a = projection_coefficients(S_u, basis.velocity, grid.dof_weights(2))
    b = projection_coefficients(S_p, basis.pressure, grid.dof_weights(1))
    g = projection_coefficients(S_n, basis.nut, grid.dof_weights(1))
    return a, b, g


def train(archive: SnapshotArchive, settings: OfflineSettings) -> TrainedModel:
    """POD, operator assembly and regression for one archive."""
    grid, bnd = archive.grid, archive.boundary
    if settings.force_patch is not None:
        grid.patch(settings.force_patch)
    stage = "pod"
    try:
        basis = build_basis(archive, settings.n_u, settings.n_p, settings.n_nut, settings.n_s,
                            settings.bc_mode, settings.nut_split)
        stage = "galerkin"
        ops = assemble_all(grid, basis, bnd.scalar_bcs, archive.nu, settings.force_patch,
                           settings.symmetric_strain, settings.force_normal_sign)
        stage = "rbf"
        a, b, g = training_coefficients(archive, basis)
        z = archive.index if archive.n_times > 1 else archive.index[:, :1]
        rbf_time = fit(z, g, settings.gamma, settings.ridge)
        rbf_vel = None
        if archive.n_times > 1:
            tab = build_training_table(a, g, archive.n_samples, archive.n_times, archive.sample_dt)
            rbf_vel = fit(tab.inputs, tab.targets, settings.gamma, settings.ridge)
        gbar = np.eye(archive.n_samples) if basis.nut_split else np.zeros((archive.n_samples, 0))
    except Exception as exc:
        raise ModelError(f"[{stage}] {exc}") from exc
    rom = ReducedModel(ops=ops, nu=archive.nu, bc_mode=settings.bc_mode,
                       scale_bc=np.array([bc.scale for bc in bnd.scalar_bcs]),
                       p_out=bnd.p_out, index=archive.index.copy(),
                       n_samples=archive.n_samples, n_times=archive.n_times,
                       sample_dt=np.asarray(archive.sample_dt, dtype=float),
                       coef_a=a, coef_b=b, coef_g=g, gbar_table=gbar,
                       rbf_time=rbf_time, rbf_velocity=rbf_vel,
                       ridge=settings.ridge, gamma=settings.gamma)
    return TrainedModel(grid, bnd, basis, rom, settings)


# ----------------------------------------------------------------- disk io
def _arrays(model: TrainedModel) -> dict[str, np.ndarray]:
    b, r = model.basis, model.rom
    out = {
        "basis_velocity": b.velocity, "basis_supremizers": b.supremizers,
        "basis_pressure": b.pressure, "basis_nut": b.nut, "basis_nut_mean": b.nut_mean,
        "basis_lifting": b.lifting, "eig_u": b.lam_u, "eig_p": b.lam_p, "eig_nut": b.lam_nut,
        "coef_a": r.coef_a, "coef_b": r.coef_b, "coef_g": r.coef_g, "gbar_table": r.gbar_table,
        "index": r.index, "sample_dt": r.sample_dt, "scale_bc": r.scale_bc,
    }
    if b.chi_c is not None:
        out["basis_chi_c"] = b.chi_c
    for name, a in r.ops.arrays().items():
        out[f"op_{name}"] = a
    for name, a in r.rbf_time.arrays().items():
        out[f"rbf_time_{name}"] = a
    if r.rbf_velocity is not None:
        for name, a in r.rbf_velocity.arrays().items():
            out[f"rbf_velocity_{name}"] = a
    return out


def save_model(model: TrainedModel, directory: str | Path) -> Path:
    """Write the model directory atomically (staging directory, then rename)."""
    target = Path(directory)
    staging = target.with_name(target.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    try:
        arrays = _arrays(model)
        manifest = {
            "format": FORMAT,
            "grid": model.grid.describe(),
            "boundary": model.boundary.describe(),
            "settings": asdict(model.settings),
            "nu": float(model.rom.nu),
            "n_samples": model.rom.n_samples,
            "n_times": model.rom.n_times,
            "n_u": model.basis.n_u, "n_s": model.basis.n_s, "n_p": model.basis.n_p,
            "n_nut": model.basis.n_nut, "n_lift": model.basis.n_bc,
            "n_mean": model.basis.nut_mean.shape[1],
            "rank_u": model.basis.ranks.get("u"), "rank_p": model.basis.ranks.get("p"),
            "rank_nut": model.basis.ranks.get("nut"),
        }
        for name in sorted(arrays):
            a = arrays[name]
            fname = f"{name}.romf"
            storage.write_matrix(staging / fname, a)
            manifest[f"shape.{name}"] = list(a.shape)
            manifest[f"sha256.{name}"] = storage.checksum(staging / fname)
        storage.write_kv(staging / "model.txt", manifest, header="mixedrom reduced model")
        if target.exists():
            shutil.rmtree(target)
        staging.rename(target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return target


def manifest_files(directory: str | Path) -> list[str]:
    meta = storage.read_kv(Path(directory) / "model.txt")
    return sorted(f"{k.split('.', 1)[1]}.romf" for k in meta if k.startswith("sha256."))


def load_model(directory: str | Path) -> TrainedModel:
    """Read and checksum-validate a model directory."""
    d = Path(directory)
    if not (d / "model.txt").exists():
        raise ModelError(f"{d}: no model.txt manifest")
    meta = storage.read_kv(d / "model.txt")
    if meta.get("format") != FORMAT:
        raise ModelError(f"{d}: unsupported model format {meta.get('format')!r}")
    arrays = {}
    for key in sorted(meta):
        if not key.startswith("sha256."):
            continue
        name = key.split(".", 1)[1]
        path = d / f"{name}.romf"
        if not path.exists():
            raise ModelError(f"{d}: missing {path.name}")
        if storage.checksum(path) != meta[key]:
            raise ModelError(f"{d}: checksum mismatch for {path.name}")
        shape = tuple(json.loads(meta[f"shape.{name}"]))
        a = storage.read_matrix(path, slices=shape[0] if len(shape) == 3 else None)
        if 0 in shape:
            a = np.zeros(shape)
        elif len(shape) == 1:
            a = a[:, 0]
        if a.shape != shape:
            raise ModelError(f"{d}: {path.name} has shape {a.shape}, manifest says {shape}")
        # row-major like a freshly trained model, so reductions round identically
        arrays[name] = np.ascontiguousarray(a)
    grid = StructuredGrid.from_description(json.loads(meta["grid"]))
    boundary = FlowBoundary.from_description(json.loads(meta["boundary"]))
    settings = OfflineSettings(**json.loads(meta["settings"]))
    ranks = {k: (None if meta[f"rank_{k}"] == "None" else int(meta[f"rank_{k}"]))
             for k in ("u", "p", "nut")}
    basis = PodBasis(arrays["basis_velocity"], arrays["basis_supremizers"],
                     arrays["basis_pressure"], arrays["basis_nut"], arrays["basis_nut_mean"],
                     arrays["eig_u"], arrays["eig_p"], arrays["eig_nut"],
                     arrays["basis_lifting"], arrays.get("basis_chi_c"), settings.bc_mode, ranks)
    opnames = [f.name for f in fields(ReducedOperators) if f.name not in ReducedOperators.SIZES]
    ops = ReducedOperators(**{n: arrays[f"op_{n}"] for n in opnames},
                           n_u=int(meta["n_u"]), n_s=int(meta["n_s"]), n_lift=int(meta["n_lift"]))

    def rbf(prefix):
        keys = ("centers", "weights", "norm", "params")
        if f"{prefix}_weights" not in arrays:
            return None
        return RbfInterpolant.from_arrays({k: arrays[f"{prefix}_{k}"] for k in keys})

    rom = ReducedModel(ops=ops, nu=float(meta["nu"]), bc_mode=settings.bc_mode,
                       scale_bc=arrays["scale_bc"], p_out=boundary.p_out, index=arrays["index"],
                       n_samples=int(meta["n_samples"]), n_times=int(meta["n_times"]),
                       sample_dt=arrays["sample_dt"], coef_a=arrays["coef_a"],
                       coef_b=arrays["coef_b"], coef_g=arrays["coef_g"],
                       gbar_table=arrays["gbar_table"], rbf_time=rbf("rbf_time"),
                       rbf_velocity=rbf("rbf_velocity"), ridge=settings.ridge,
                       gamma=settings.gamma)
    return TrainedModel(grid, boundary, basis, rom, settings)
