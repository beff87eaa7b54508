"""Gaussian RBF regression of eddy-viscosity coefficients and its training data."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist, pdist

log = logging.getLogger(__name__)


class RbfError(ValueError):
    pass


class ExtrapolationWarning(UserWarning):
    pass


def gaussian(r: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-(gamma * r) ** 2)


@dataclass
class RbfInterpolant:
    """``y(z) = sum_j w_j exp(-(gamma |z_hat - c_j|)^2)`` on normalized inputs.

    ``z_hat = (z - lo) / scale`` maps the training box onto ``[0, 1]^d``.
    """

    centers: np.ndarray   # (n, d), normalized
    weights: np.ndarray   # (n, n_out)
    gamma: float
    lo: np.ndarray
    scale: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        # fixed memory layout keeps evaluation bit-identical across save/load
        for name in ("centers", "weights", "lo", "scale"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))

    @property
    def n_inputs(self) -> int:
        return self.centers.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[1]

    def normalize(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z, dtype=float) - self.lo) / self.scale

    def __call__(self, z: np.ndarray, warn: bool = True) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        z2 = np.atleast_2d(z)
        if z2.shape[1] != self.n_inputs:
            raise RbfError(f"query has {z2.shape[1]} inputs, interpolant expects {self.n_inputs}")
        zh = self.normalize(z2)
        if warn and (np.any(zh < -0.1) or np.any(zh > 1.1)):
            warnings.warn("RBF query outside the training box by more than 10%",
                          ExtrapolationWarning, stacklevel=2)
        out = gaussian(cdist(zh, self.centers), self.gamma) @ self.weights
        return out[0] if single else out

    def arrays(self) -> dict[str, np.ndarray]:
        return {"centers": self.centers, "weights": self.weights,
                "norm": np.vstack([self.lo, self.scale]).T,
                "params": np.array([self.gamma, self.ridge])}

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "RbfInterpolant":
        gamma, ridge = a["params"].ravel()
        return cls(a["centers"], a["weights"], float(gamma), a["norm"][:, 0].copy(),
                   a["norm"][:, 1].copy(), float(ridge))


def fit(inputs: np.ndarray, outputs: np.ndarray, gamma: float | None = None,
        ridge: float = 1e-10) -> RbfInterpolant:
    """Solve ``(K + ridge I) w = Y`` for every output column.

    ``gamma`` defaults to the inverse mean pairwise distance of the
    normalized centres.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    Y = np.asarray(outputs, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise RbfError(f"{X.shape[0]} centres but {Y.shape[0]} output rows")
    if X.shape[0] == 0:
        raise RbfError("no training centres")
    lo = X.min(axis=0)
    scale = X.max(axis=0) - lo
    scale[scale == 0.0] = 1.0
    Xh = (X - lo) / scale
    d = pdist(Xh)
    if d.size and d.min() == 0.0:
        dup = int(np.sum(d == 0.0))
        if ridge <= 0.0:
            raise RbfError(f"{dup} duplicate centre pair(s); use a positive ridge")
        log.warning("%d duplicate RBF centre pair(s) regularized by ridge %g", dup, ridge)
    if gamma is None:
        gamma = 1.0 / d.mean() if d.size and d.mean() > 0 else 1.0
    K = gaussian(cdist(Xh, Xh), gamma)
    A = K + ridge * np.eye(len(K))
    try:
        w = sla.solve(A, Y, assume_a="pos")
    except (sla.LinAlgError, ValueError) as exc:
        raise RbfError(f"RBF kernel matrix is singular ({exc}); increase the ridge") from None
    if not np.all(np.isfinite(w)):
        raise RbfError("RBF weights are not finite; increase the ridge")
    return RbfInterpolant(Xh, w, float(gamma), lo, scale, float(ridge))


# ---------------------------------------------------------- mean coefficients
@dataclass
class LinearInterpolant1D:
    """Piecewise-linear map ``mu -> row`` with clamped ends."""

    x: np.ndarray
    table: np.ndarray  # (len(x), n_out)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.table = np.asarray(self.table, dtype=float).reshape(len(self.x), -1)
        if len(self.x) < 1:
            raise RbfError("need at least one sample")
        if np.any(np.diff(self.x) <= 0.0):
            raise RbfError("samples must be strictly increasing")

    def __call__(self, mu: float) -> np.ndarray:
        if len(self.x) == 1:
            return self.table[0].copy()
        return np.array([np.interp(mu, self.x, col) for col in self.table.T])

    def in_range(self, mu: float) -> bool:
        return bool(self.x[0] <= mu <= self.x[-1])


def fit_mean_coefficients(mus: np.ndarray, table: np.ndarray) -> LinearInterpolant1D:
    """Piecewise-linear interpolant of per-sample coefficient rows."""
    mus = np.asarray(mus, dtype=float)
    if len(mus) < 2:
        raise RbfError("need at least two samples to interpolate")
    return LinearInterpolant1D(mus, table)


# -------------------------------------------------------------- training data
def projection_coefficients(S: np.ndarray, modes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``(s_r, mode_l)`` for every snapshot row ``r`` and mode ``l``."""
    if S.shape[0] != modes.shape[0]:
        raise RbfError(f"snapshots have {S.shape[0]} rows, basis has {modes.shape[0]}")
    return S.T @ (weights[:, None] * modes)


@dataclass
class TrainingTable:
    """Inputs and targets for the velocity-coefficient regression.

    ``inputs`` rows are ``[a^r, (a^r - a^{r-1}) / dt_k]`` for every sample
    ``k`` and ``r = 2..N_T``; ``targets`` are the matching ``g^r``.
    """

    inputs: np.ndarray
    targets: np.ndarray


def build_training_table(a: np.ndarray, g: np.ndarray, n_samples: int, n_times: int,
                         sample_dt: np.ndarray) -> TrainingTable:
    if n_times < 2:
        raise RbfError("the velocity-coefficient table needs N_T >= 2")
    if a.shape[0] != n_samples * n_times or g.shape[0] != a.shape[0]:
        raise RbfError("coefficient tables do not match n_samples * n_times")
    ab = a.reshape(n_samples, n_times, -1)
    gb = g.reshape(n_samples, n_times, -1)
    dt = np.asarray(sample_dt, dtype=float).reshape(n_samples, 1, 1)
    rate = (ab[:, 1:] - ab[:, :-1]) / dt
    inputs = np.concatenate([ab[:, 1:], rate], axis=2).reshape(n_samples * (n_times - 1), -1)
    return TrainingTable(inputs, gb[:, 1:].reshape(n_samples * (n_times - 1), -1))
