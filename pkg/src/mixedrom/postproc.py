"""Error metrics, forces, lift-curve comparison and peak/period analysis."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .galerkin import viscous_traction
from .grid import StructuredGrid


class PostprocError(ValueError):
    pass


def relative_error(reference: np.ndarray, approx: np.ndarray, weights: np.ndarray) -> float:
    """``100 ||ref - approx|| / ||ref||`` in the weighted L2 norm.

    ``weights`` are the diagonal quadrature weights of the layout, e.g.
    :meth:`StructuredGrid.dof_weights` for packed vectors.
    """
    reference = np.asarray(reference, dtype=float)
    approx = np.asarray(approx, dtype=float)
    if reference.shape != approx.shape:
        raise PostprocError(f"shape mismatch {reference.shape} vs {approx.shape}")
    den = np.sqrt(np.dot(weights, reference ** 2))
    if den == 0.0:
        raise PostprocError("reference field has zero norm")
    return float(100.0 * np.sqrt(np.dot(weights, (reference - approx) ** 2)) / den)


def reduced_force(a: np.ndarray, b: np.ndarray, delta: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``sum a_i delta_i - sum b_j theta_j``."""
    return np.asarray(a) @ delta - np.asarray(b) @ theta


def surface_force(grid: StructuredGrid, u_packed: np.ndarray, p_packed: np.ndarray, patch: str,
                  mu: float, symmetric: bool = False, normal_sign: float = 1.0) -> np.ndarray:
    """Direct integration of ``(2 mu grad u - p I) n`` over a patch."""
    u, ub = grid.unpack_vector(u_packed)
    _, pb = grid.unpack_scalar(p_packed)
    visc = viscous_traction(grid, u, ub, patch, mu, symmetric, normal_sign)
    return visc - normal_sign * grid.boundary_integral(pb, patch)


def lift_coefficient(force: np.ndarray, rho: float, u_ref: float, d_ref: float) -> float:
    """Second force component over ``rho U^2 D / 2``."""
    return float(np.asarray(force)[..., 1] / (0.5 * rho * u_ref ** 2 * d_ref))


@dataclass
class LiftSignal:
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise PostprocError("times and values differ in length")
        if np.any(np.diff(self.times) <= 0.0):
            raise PostprocError("signal times must be strictly increasing")


def lift_curve_error(ref: LiftSignal, rom: LiftSignal, t1: float | None = None,
                     t2: float | None = None) -> float:
    """Relative L2(t1, t2) error in percent, trapezoid rule on the reference times.

    The reduced signal is linearly interpolated onto the reference samples.
    """
    lo = max(ref.times[0], rom.times[0], -np.inf if t1 is None else t1)
    hi = min(ref.times[-1], rom.times[-1], np.inf if t2 is None else t2)
    sel = (ref.times >= lo - 1e-12) & (ref.times <= hi + 1e-12)
    if hi <= lo or sel.sum() < 2:
        raise PostprocError("signals do not overlap on the requested interval")
    t = ref.times[sel]
    r = ref.values[sel]
    x = np.interp(t, rom.times, rom.values)
    den = np.trapezoid(r ** 2, t)
    if den <= 0.0:
        raise PostprocError("reference signal is zero on the interval")
    return float(100.0 * np.sqrt(np.trapezoid((r - x) ** 2, t) / den))


def find_peaks(signal: LiftSignal, window: tuple[float, float] | None = None
               ) -> tuple[np.ndarray, np.ndarray]:
    """Local maxima (strict 3-point test) refined by a parabola through the neighbours."""
    t, y = signal.times, signal.values
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    i = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])) + 1
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    h0, h1 = t[i] - t[i - 1], t[i + 1] - t[i]
    # vertex of the parabola through three (possibly uneven) points
    d1 = (y1 - y0) / h0
    d2 = (y2 - y1) / h1
    curv = (d2 - d1) / (h0 + h1)
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(curv != 0.0, -(d1 + curv * h0) / (2.0 * curv), 0.0)
    shift = np.clip(shift, -h0, h1)
    tp = t[i] + shift
    yp = y1 + (d1 + curv * h0) * shift + curv * shift ** 2
    return tp, yp


def peak_and_period(signal: LiftSignal, window: tuple[float, float] | None = None
                    ) -> tuple[np.ndarray, np.ndarray, float]:
    """Peak times, peak values and the mean spacing between peaks."""
    tp, yp = find_peaks(signal, window)
    if len(tp) < 2:
        raise PostprocError(f"found {len(tp)} peak(s); need at least 2 for a period")
    return tp, yp, float(np.mean(np.diff(tp)))


def peak_errors(ref_peaks: np.ndarray, rom_peaks: np.ndarray) -> np.ndarray:
    """``100 (PK_ref - PK_rom) / PK_ref`` for the peaks both signals have."""
    n = min(len(ref_peaks), len(rom_peaks))
    ref = np.asarray(ref_peaks[:n], dtype=float)
    return 100.0 * (ref - np.asarray(rom_peaks[:n], dtype=float)) / ref


def inlet_mismatch(grid: StructuredGrid, scalar_bcs, u_packed: np.ndarray, mu: float) -> float:
    """Relative L2 mismatch between velocity traces and prescribed values.

    Integrated over the faces of every scalar boundary condition, each
    comparing one component against ``scale * mu``.
    """
    _, ub = grid.unpack_vector(u_packed)
    num = den = 0.0
    for bc in scalar_bcs:
        faces = grid.patch(bc.patch).faces
        area = grid.bface_area[faces]
        target = bc.scale * mu
        num += float(np.sum(area * (ub[faces, bc.comp] - target) ** 2))
        den += float(np.sum(area) * target ** 2)
    if den == 0.0:
        raise PostprocError("no nonzero prescribed boundary values")
    return float(np.sqrt(num / den))
