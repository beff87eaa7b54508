"""Run configuration: a ``key = value`` text file with command-line overrides."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import fom, storage

PRESETS = {"step_channel": fom.step_channel, "square_obstacle": fom.square_obstacle,
           "cavity": fom.cavity}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # geometry and full-order campaign
    preset: str = "step_channel"
    nx: int | None = None
    ny: int | None = None
    nu: float = 0.02
    c_s: float = 0.17
    convection: str = "central"
    samples: list[float] = field(default_factory=lambda: [1.0])
    dt: str | float | list[float] = 0.01
    dt_max: float = 0.012
    n_snapshots: int = 1
    save_every: int = 1
    spin_up: float = 0.0
    steady_tol: float | None = None
    phase_patch: str | None = None
    phase_wait: float = 50.0
    # paths (relative to the config file)
    archive: str = "archive"
    model: str = "model"
    output: str = "results"
    reference: str | None = None
    # offline
    bc_mode: str = "penalty"
    nut_split: bool = False
    n_u: int | None = None
    n_p: int | None = None
    n_nut: int | None = None
    n_s: int | None = None
    gamma: float | None = None
    ridge: float = 1e-10
    force_patch: str | None = None
    symmetric_strain: bool = False
    # online
    mu: list[float] = field(default_factory=list)
    steady: bool = True
    g_mode: str = "time"
    tau: float = 1e4
    rom_dt: float | None = None
    t_final: float | None = None
    online_n_u: int | None = None
    online_n_s: int | None = None
    online_n_p: int | None = None
    online_n_nut: int | None = None
    rho: float = 1.0
    d_ref: float = 1.0
    sweep_tau: list[float] = field(default_factory=lambda: [1e2, 1e4, 1e6])
    sweep_modes: list[int] = field(default_factory=lambda: [2, 4, 6, 8])
    base_dir: str = "."

    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def dts(self) -> list[float]:
        """Per-sample FOM steps.

        ``auto`` uses ``min(dt_max, nu / mu^2)``; ``convective`` uses
        ``dt_max / mu`` so every sample spans the same convective time.
        """
        if self.dt == "auto":
            return [min(self.dt_max, self.nu / m ** 2) for m in self.samples]
        if self.dt == "convective":
            return [self.dt_max / m for m in self.samples]
        if isinstance(self.dt, list):
            return [float(d) for d in self.dt]
        return [float(self.dt)] * len(self.samples)

    def geometry(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        kw = {}
        if self.preset == "cavity":
            if self.nx is not None:
                kw["n"] = self.nx
        else:
            if self.nx is not None:
                kw["nx"] = self.nx
            if self.ny is not None:
                kw["ny"] = self.ny
        return PRESETS[self.preset](**kw)

    def fom_config(self) -> fom.FomConfig:
        grid, bc = self.geometry()
        return fom.FomConfig(grid, bc, nu=self.nu, samples=self.samples, dt=self.dts(),
                             n_snapshots=self.n_snapshots, save_every=self.save_every,
                             spin_up=self.spin_up, steady_tol=self.steady_tol, c_s=self.c_s,
                             convection=self.convection, preset=self.preset,
                             phase_patch=self.phase_patch, phase_wait=self.phase_wait)


def _parse_value(raw: str, kind: str):
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        return None
    if kind.startswith("str | float | list"):
        if raw in ("auto", "convective"):
            return raw
        parts = raw.replace(",", " ").split()
        return float(parts[0]) if len(parts) == 1 else [float(x) for x in parts]
    if "list[float]" in kind or "list[int]" in kind:
        cast = int if "list[int]" in kind else float
        if raw.startswith("["):
            return [cast(x) for x in json.loads(raw)]
        return [cast(x) for x in raw.replace(",", " ").split()]
    if kind.startswith("bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw


def parse_items(items: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    kinds = {f.name: str(f.type) for f in fields(RunConfig)}
    values = {}
    for key, raw in items.items():
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _parse_value(raw, kinds[key])
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    return replace(base, **values) if base is not None else RunConfig(**values)


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    items = {}
    base_dir = "."
    if path is not None:
        items = storage.read_kv(path)
        base_dir = str(Path(path).resolve().parent)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override must look like key=value, got {ov!r}")
        k, v = ov.split("=", 1)
        items[k.strip()] = v.strip()
    items.setdefault("base_dir", base_dir)
    return parse_items(items)
