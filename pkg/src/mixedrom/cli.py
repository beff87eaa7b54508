"""Command-line driver: ``generate``, ``offline``, ``online``, ``sweep-tau``, ``sweep-modes``.

Every subcommand reads a ``key = value`` config file; ``--set key=value``
flags override it.  Failures exit with status 1 and a stage-tagged message.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import SnapshotArchive
from .config import ConfigError, RunConfig, load_config
from .fom import generate_snapshots
from .model import OfflineSettings, TrainedModel, load_model, save_model, train
from .pod import cumulative_energy
from .postproc import (LiftSignal, inlet_mismatch, lift_coefficient, lift_curve_error,
                       peak_and_period, peak_errors, relative_error, surface_force)
from .rom import (RomState, SolverOptions, reconstruct_fields, reduced_force, run_unsteady,
                  steady_solve)

log = logging.getLogger("mixedrom")


class StageError(RuntimeError):
    """Failure tagged with the pipeline stage it came from."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def eigen_table(model: TrainedModel, n_rows: int = 12) -> str:
    """Ignored-energy decay ``1 - cumulative energy`` per field."""
    b = model.basis
    cols = [("u", b.lam_u), ("p", b.lam_p), ("nu_t", b.lam_nut)]
    n = min(n_rows, max(len(lam) for _, lam in cols))
    lines = ["modes " + " ".join(f"{name:>12s}" for name, _ in cols)]
    for i in range(n):
        cells = []
        for _, lam in cols:
            if i < len(lam) and lam[0] > 0:
                cells.append(f"{max(1.0 - cumulative_energy(lam)[i], 0.0):12.4e}")
            else:
                cells.append(f"{'-':>12s}")
        lines.append(f"{i + 1:5d} " + " ".join(cells))
    return "\n".join(lines)


# ------------------------------------------------------------------ stages
def run_generate(cfg: RunConfig) -> SnapshotArchive:
    try:
        fc = cfg.fom_config()
        t0 = time.perf_counter()
        archive = generate_snapshots(fc)
        log.info("FOM campaign: %d samples in %.1f s", len(cfg.samples), time.perf_counter() - t0)
        archive.save(cfg.path("archive"))
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError("fom", str(exc)) from exc
    return archive


def offline_settings(cfg: RunConfig) -> OfflineSettings:
    return OfflineSettings(bc_mode=cfg.bc_mode, nut_split=cfg.nut_split, n_u=cfg.n_u,
                           n_p=cfg.n_p, n_nut=cfg.n_nut, n_s=cfg.n_s, gamma=cfg.gamma,
                           ridge=cfg.ridge, force_patch=cfg.force_patch,
                           symmetric_strain=cfg.symmetric_strain)


def run_offline(cfg: RunConfig, generate: bool = False) -> TrainedModel:
    apath = cfg.path("archive")
    if generate:
        archive = run_generate(cfg)
    elif not (apath / "meta.txt").exists():
        raise StageError("offline", f"no snapshot archive at {apath}; run `generate` or pass --generate")
    else:
        archive = SnapshotArchive.load(apath)
    try:
        model = train(archive, offline_settings(cfg))
    except Exception as exc:
        msg = str(exc)
        stage = msg[1:msg.index("]")] if msg.startswith("[") else "offline"
        raise StageError(stage, msg.split("] ", 1)[-1]) from exc
    try:
        save_model(model, cfg.path("model"))
    except Exception as exc:
        raise StageError("io", str(exc)) from exc
    b = model.basis
    out = cfg.path("output")
    rows = []
    for i in range(max(len(b.lam_u), len(b.lam_p), len(b.lam_nut))):
        rows.append([i + 1] + [lam[i] if i < len(lam) else "" for lam in (b.lam_u, b.lam_p, b.lam_nut)])
    write_csv(out / "eigenvalues.csv", ["mode", "lambda_u", "lambda_p", "lambda_nut"], rows)
    return model


def solver_options(cfg: RunConfig, model: TrainedModel, **kw) -> SolverOptions:
    rom = model.rom
    dt = cfg.rom_dt if cfg.rom_dt is not None else float(rom.sample_dt[0])
    t_final = cfg.t_final if cfg.t_final is not None else float(rom.index[rom.n_times - 1, 1])
    base = dict(tau=cfg.tau, dt=dt, t_final=t_final, g_mode=cfg.g_mode, n_u=cfg.online_n_u,
                n_s=cfg.online_n_s, n_p=cfg.online_n_p, n_nut=cfg.online_n_nut)
    base.update(kw)
    return SolverOptions(**base)


@dataclass
class OnlineResult:
    mu: float
    times: np.ndarray
    states: list
    fields: list = field(default_factory=list)        # (u, p, nut) per state
    errors: list = field(default_factory=list)        # (t, eps_u, eps_p, eps_nut)
    lift: LiftSignal | None = None
    ref_lift: LiftSignal | None = None
    summary: dict = field(default_factory=dict)


def _states_from_trajectory(tr, mu: float) -> list[RomState]:
    return [RomState(tr.a[k], tr.b[k], tr.g[k], np.zeros(0), float(tr.times[k]), mu)
            for k in range(len(tr.times))]


def _has_sample(ref: SnapshotArchive | None, mu: float) -> bool:
    return ref is not None and bool(np.any(np.isclose(ref.mus, mu, rtol=0, atol=1e-9)))


def _reference_columns(ref: SnapshotArchive, mu: float) -> slice:
    k = np.flatnonzero(np.isclose(ref.mus, mu, rtol=0, atol=1e-9))
    if len(k) == 0:
        raise StageError("online", f"reference archive has no sample at mu={mu}")
    return ref.sample_columns(int(k[0]))


def solve_one(model: TrainedModel, mu: float, options: SolverOptions, steady: bool,
              reference: SnapshotArchive | None = None, rho: float = 1.0, d_ref: float = 1.0
              ) -> OnlineResult:
    """Solve at one parameter value and post-process."""
    rom = model.rom
    lo, hi = rom.mus.min(), rom.mus.max()
    if not lo <= mu <= hi:
        log.warning("mu=%g is outside the training range [%g, %g]", mu, lo, hi)
    try:
        if steady:
            st, info = steady_solve(rom, mu, options)
            states = [st]
        else:
            tr = run_unsteady(rom, mu, options)
            states = _states_from_trajectory(tr, mu)
            if model.basis.nut_split:
                from .rom import mean_coefficients
                gbar = mean_coefficients(rom, mu)
                for s in states:
                    s.gbar = gbar
    except Exception as exc:
        raise StageError("online", str(exc)) from exc
    res = OnlineResult(mu, np.array([s.t for s in states]), states)
    bc = rom.bc_values(mu)
    grid = model.grid
    if rom.ops.delta.shape[0] and model.settings.force_patch is not None:
        f = np.array([reduced_force(rom, s) for s in states])
        cl = f[:, 1] / (0.5 * rho * mu ** 2 * d_ref)
        if len(states) > 1:
            res.lift = LiftSignal(res.times, cl)
        res.summary["lift_final"] = float(cl[-1])
    if reference is not None:
        cols = _reference_columns(reference, mu)
        w2, w1 = grid.dof_weights(2), grid.dof_weights(1)
        ref_t = reference.index[cols, 1]
        for j, t in zip(range(cols.start, cols.stop), ref_t):
            if steady:
                s = states[0]
            else:
                if t < res.times[0] - 1e-9 or t > res.times[-1] + 1e-9:
                    continue
                s = _interpolate_state(states, res.times, t)
            u, p, nut = reconstruct_fields(model.basis, s, bc, rom.p_out)
            res.errors.append((float(t), relative_error(reference.S_u[:, j], u, w2),
                               relative_error(reference.S_p[:, j], p, w1),
                               relative_error(reference.S_nut[:, j], nut, w1)))
            if steady:
                break
        if res.errors:
            e = np.array(res.errors)
            res.summary.update(eps_u=float(e[:, 1].mean()), eps_p=float(e[:, 2].mean()),
                               eps_nut=float(e[:, 3].mean()))
        if model.settings.force_patch is not None and not steady and len(ref_t) > 2:
            sgn = model.settings.force_normal_sign
            mu_visc = reference.nu
            cl = []
            for j in range(cols.start, cols.stop):
                f = surface_force(grid, reference.S_u[:, j], reference.S_p[:, j],
                                  model.settings.force_patch, mu_visc,
                                  model.settings.symmetric_strain, sgn)
                cl.append(lift_coefficient(f, rho, mu, d_ref))
            res.ref_lift = LiftSignal(ref_t, np.array(cl))
            if res.lift is not None:
                _compare_lift(res)
    return res


def _interpolate_state(states, times, t) -> RomState:
    k = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
    h = times[k + 1] - times[k]
    w = 0.0 if h == 0 else (t - times[k]) / h
    s0, s1 = states[k], states[k + 1]
    mix = lambda x0, x1: (1.0 - w) * x0 + w * x1  # noqa: E731
    return RomState(mix(s0.a, s1.a), mix(s0.b, s1.b), mix(s0.g, s1.g), s0.gbar, float(t), s0.mu)


def _compare_lift(res: OnlineResult) -> None:
    ref, rom = res.ref_lift, res.lift
    try:
        res.summary["eps_cl"] = lift_curve_error(ref, rom)
    except Exception as exc:
        log.warning("lift comparison skipped: %s", exc)
        return
    for name, sig in (("ref", ref), ("rom", rom)):
        try:
            _, pk, period = peak_and_period(sig)
            res.summary[f"period_{name}"] = period
            res.summary[f"peaks_{name}"] = pk
        except Exception as exc:
            log.warning("%s signal: %s", name, exc)
    if "peaks_ref" in res.summary and "peaks_rom" in res.summary:
        pe = peak_errors(res.summary["peaks_ref"], res.summary["peaks_rom"])
        res.summary["peak_error_max"] = float(np.max(np.abs(pe))) if pe.size else float("nan")


def run_online(cfg: RunConfig, model: TrainedModel | None = None) -> list[OnlineResult]:
    if not cfg.mu:
        raise StageError("online", "no online parameter given (set mu=...)")
    if model is None:
        try:
            model = load_model(cfg.path("model"))
        except Exception as exc:
            raise StageError("io", str(exc)) from exc
    try:
        options = solver_options(cfg, model)
        model = model.truncated(options)
    except Exception as exc:
        raise StageError("online", str(exc)) from exc
    reference = SnapshotArchive.load(cfg.path("reference")) if cfg.reference else None
    results = [solve_one(model, mu, options, cfg.steady, reference, cfg.rho, cfg.d_ref)
               for mu in cfg.mu]
    write_online_reports(cfg.path("output"), results)
    return results


def write_online_reports(out: Path, results: list[OnlineResult]) -> None:
    rows = []
    for r in results:
        for s in r.states:
            rows.append([r.mu, s.t, *s.a, *s.b, *s.g])
    s0 = results[0].states[0]
    header = (["mu", "t"] + [f"a{i}" for i in range(len(s0.a))]
              + [f"b{i}" for i in range(len(s0.b))] + [f"g{i}" for i in range(len(s0.g))])
    write_csv(out / "coefficients.csv", header, rows)
    err = [[r.mu, *e] for r in results for e in r.errors]
    if err:
        write_csv(out / "errors.csv", ["mu", "t", "eps_u_percent", "eps_p_percent",
                                       "eps_nut_percent"], err)
    lift = [[r.mu, t, v] for r in results if r.lift is not None
            for t, v in zip(r.lift.times, r.lift.values)]
    if lift:
        write_csv(out / "lift.csv", ["mu", "t", "C_l"], lift)
    lines = []
    for r in results:
        items = [f"mu={r.mu:g}"]
        for k, v in r.summary.items():
            if np.ndim(v) == 0:
                items.append(f"{k}={float(v):.6g}")
        lines.append(" ".join(items))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def run_sweep_tau(cfg: RunConfig, model: TrainedModel | None = None) -> list[list[float]]:
    """Steady solves over ``cfg.sweep_tau``: inlet-trace mismatch and errors."""
    if model is None:
        model = load_model(cfg.path("model"))
    reference = SnapshotArchive.load(cfg.path("reference")) if cfg.reference else None
    rows = []
    mus = cfg.mu or [float(model.rom.mus[len(model.rom.mus) // 2])]
    for mu in mus:
        for tau in cfg.sweep_tau:
            opts = solver_options(cfg, model, tau=tau)
            m = model.truncated(opts)
            ref = reference if _has_sample(reference, mu) else None
            res = solve_one(m, mu, opts, True, ref, cfg.rho, cfg.d_ref)
            u, _, _ = reconstruct_fields(m.basis, res.states[0], m.rom.bc_values(mu), m.rom.p_out)
            mis = inlet_mismatch(m.grid, m.boundary.scalar_bcs, u, mu)
            rows.append([mu, tau, mis, res.summary.get("eps_u", float("nan")),
                         res.summary.get("eps_p", float("nan"))])
    write_csv(cfg.path("output") / "tau_sweep.csv",
              ["mu", "tau", "inlet_mismatch_relative", "eps_u_percent", "eps_p_percent"], rows)
    return rows


def run_sweep_modes(cfg: RunConfig, model: TrainedModel | None = None) -> list[list[float]]:
    """Mean errors over ``cfg.mu`` for equal mode counts ``n`` in ``cfg.sweep_modes``."""
    if model is None:
        model = load_model(cfg.path("model"))
    if not cfg.reference:
        raise StageError("online", "sweep-modes needs reference=<archive>")
    reference = SnapshotArchive.load(cfg.path("reference"))
    mus = cfg.mu or list(reference.mus)
    rows = []
    for n in cfg.sweep_modes:
        opts = solver_options(cfg, model, n_u=n, n_s=n, n_p=n,
                              n_nut=min(n, model.basis.n_nut))
        try:
            m = model.truncated(opts)
        except Exception as exc:
            raise StageError("online", str(exc)) from exc
        eu, ep = [], []
        for mu in mus:
            r = solve_one(m, mu, opts, cfg.steady, reference, cfg.rho, cfg.d_ref)
            eu.append(r.summary["eps_u"])
            ep.append(r.summary["eps_p"])
        rows.append([n, float(np.mean(eu)), float(np.mean(ep)), float(np.max(eu)), float(np.max(ep))])
    write_csv(cfg.path("output") / "modes_sweep.csv",
              ["modes", "mean_eps_u_percent", "mean_eps_p_percent", "max_eps_u_percent",
               "max_eps_p_percent"], rows)
    return rows


# --------------------------------------------------------------------- main
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixedrom", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("generate", "run the full-order campaign and save the snapshot archive"),
                        ("offline", "POD, operator assembly and regression; writes the model"),
                        ("online", "reduced solves at the configured parameter values"),
                        ("sweep-tau", "inlet mismatch and errors over penalty factors"),
                        ("sweep-modes", "held-out errors over mode counts")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", "-c", help="key = value configuration file")
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration entry (repeatable)")
        if name == "offline":
            s.add_argument("--generate", action="store_true",
                           help="run the full-order campaign first")
        if name in ("online", "sweep-tau", "sweep-modes"):
            s.add_argument("--mu", help="comma-separated parameter values")
        if name == "sweep-tau":
            s.add_argument("--tau-sweep", help="comma-separated penalty factors")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if getattr(args, "mu", None):
        overrides.append(f"mu={args.mu}")
    if getattr(args, "tau_sweep", None):
        overrides.append(f"sweep_tau={args.tau_sweep}")
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            ar = run_generate(cfg)
            print(f"archive {cfg.path('archive')}: {ar.n_samples} samples x {ar.n_times} times")
        elif args.command == "offline":
            model = run_offline(cfg, args.generate)
            print(f"model {cfg.path('model')}: N_u={model.basis.n_u} N_S={model.basis.n_s} "
                  f"N_p={model.basis.n_p} N_nut={model.basis.n_nut} ranks={model.basis.ranks}")
            print("ignored energy after n modes")
            print(eigen_table(model))
        elif args.command == "online":
            for r in run_online(cfg):
                print(" ".join([f"mu={r.mu:g}"] + [f"{k}={float(v):.6g}" for k, v in r.summary.items()
                                                   if np.ndim(v) == 0]))
        elif args.command == "sweep-tau":
            print("mu tau inlet_mismatch eps_u% eps_p%")
            for row in run_sweep_tau(cfg):
                print(" ".join(f"{x:.6g}" for x in row))
        elif args.command == "sweep-modes":
            print("modes mean_eps_u% mean_eps_p% max_eps_u% max_eps_p%")
            for row in run_sweep_modes(cfg):
                print(" ".join(f"{x:.6g}" for x in row))
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything unexpected still gets a tag and a status
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
