"""Online stage: reduced steady and unsteady solves and field reconstruction.

Reduced system for the velocity coefficients ``a`` (modes and supremizers)
and pressure coefficients ``b``::

    M da/dt = nu (B + BT) a - C(a, a) + gbar.(CT1m + CT2m) a + g.(CT1 + CT2) a
              - H b [+ tau sum_k (U_k D^k - E^k a)]
    P a = 0

In lifting mode ``a`` is extended by frozen boundary coefficients ``U_BC``
(and the pressure by ``p_out chi_c``); only the first ``N`` rows are tested.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .galerkin import ReducedOperators
from .rbf import LinearInterpolant1D, RbfInterpolant

log = logging.getLogger(__name__)


class RomError(RuntimeError):
    pass


@dataclass
class RomState:
    a: np.ndarray
    b: np.ndarray
    g: np.ndarray
    gbar: np.ndarray
    t: float
    mu: float


@dataclass
class SolverOptions:
    """Online settings.  Mode counts of ``None`` mean the stored maximum."""

    tau: float = 1e4
    dt: float | None = None
    t_final: float | None = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    g_mode: str = "time"          # "time" or "velocity"
    n_u: int | None = None
    n_s: int | None = None
    n_p: int | None = None
    n_nut: int | None = None

    def __post_init__(self):
        if self.g_mode not in ("time", "velocity"):
            raise ValueError(f"unknown g-mode {self.g_mode!r}")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class ReducedModel:
    """Everything the online stage needs, at the stored maximum ranks.

    ``coef_a``/``coef_b``/``coef_g`` are the L2 projection coefficients of
    every training snapshot (rows grouped by sample, then time), used for
    initial conditions and guesses.  ``rbf_time`` maps ``(mu[, t])`` to
    ``g``; ``rbf_velocity`` maps ``(a, da/dt)`` to ``g``.
    """

    ops: ReducedOperators
    nu: float
    bc_mode: str
    scale_bc: np.ndarray          # U_BC = scale_bc * mu
    p_out: float
    index: np.ndarray             # (N_s, 2) mu, t
    n_samples: int
    n_times: int
    sample_dt: np.ndarray
    coef_a: np.ndarray
    coef_b: np.ndarray
    coef_g: np.ndarray
    gbar_table: np.ndarray        # (M, n_mean), empty without the split
    rbf_time: RbfInterpolant
    rbf_velocity: RbfInterpolant | None = None
    ridge: float = 1e-10
    gamma: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def mus(self) -> np.ndarray:
        return self.index[::self.n_times, 0].copy()

    @property
    def time_inputs(self) -> bool:
        return self.n_times > 1

    def bc_values(self, mu: float) -> np.ndarray:
        return self.scale_bc * mu

    def truncated(self, options: SolverOptions) -> "ReducedModel":
        """Slice operators and tables to the requested mode counts."""
        from .rbf import build_training_table, fit
        o = self.ops
        n_u = o.n_u if options.n_u is None else options.n_u
        n_s = o.n_s if options.n_s is None else options.n_s
        n_p = o.n_p if options.n_p is None else options.n_p
        n_nut = o.n_nut if options.n_nut is None else options.n_nut
        ops = o.truncated(n_u, n_s, n_p, n_nut)
        rt = replace(self.rbf_time, weights=self.rbf_time.weights[:, :n_nut])
        rv = self.rbf_velocity
        if rv is not None:
            if n_u == o.n_u:
                rv = replace(rv, weights=rv.weights[:, :n_nut])
            else:
                tab = build_training_table(self.coef_a[:, :n_u], self.coef_g[:, :n_nut],
                                           self.n_samples, self.n_times, self.sample_dt)
                rv = fit(tab.inputs, tab.targets, self.gamma, self.ridge)
        return replace(self, ops=ops, coef_a=self.coef_a[:, :n_u], coef_b=self.coef_b[:, :n_p],
                       coef_g=self.coef_g[:, :n_nut], rbf_time=rt, rbf_velocity=rv)


# ------------------------------------------------------------- viscosity
def mean_coefficients(model: ReducedModel, mu: float) -> np.ndarray:
    if model.gbar_table.shape[1] == 0:
        return np.zeros(0)
    return LinearInterpolant1D(model.mus, model.gbar_table)(mu)


def evaluate_viscosity_coeffs(model: ReducedModel, mode: str, mu: float, t: float,
                              a: np.ndarray | None = None, a_rate: np.ndarray | None = None
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Eddy-viscosity coefficients ``g`` and mean coefficients ``gbar``.

    ``mode="time"`` evaluates the RBF at ``(mu, t)`` (``mu`` alone for
    steady models); ``mode="velocity"`` at ``(a[:N_u], da/dt[:N_u])``.
    """
    gbar = mean_coefficients(model, mu)
    if mode == "time":
        z = [mu, t] if model.time_inputs else [mu]
        return model.rbf_time(np.array(z)), gbar
    if model.rbf_velocity is None:
        raise RomError("this model has no velocity-coefficient interpolant (needs N_T >= 2)")
    n_u = model.ops.n_u
    rate = np.zeros(n_u) if a_rate is None else a_rate[:n_u]
    z = np.concatenate([a[:n_u], rate])
    return model.rbf_velocity(z, warn=False), gbar


# --------------------------------------------------------------- system
class ReducedSystem:
    """Residual and Jacobian of the reduced equations at fixed ``mu``."""

    def __init__(self, model: ReducedModel, mu: float, tau: float):
        ops = model.ops
        self.model, self.ops, self.mu, self.tau = model, ops, mu, tau
        self.n, self.n_p = ops.n, ops.n_p
        u_bc = model.bc_values(mu)
        self.lift = u_bc if ops.n_lift else np.zeros(0)
        self.penalty = model.bc_mode == "penalty" and ops.D.shape[0] > 0
        if self.penalty and tau <= 0:
            raise RomError("penalty mode needs tau > 0")
        n = self.n
        self.M = ops.M[:n, :n]
        self.H = ops.H[:n]
        self.P = ops.P[:, :n]
        self.p_lift = model.p_out if (ops.n_lift and np.any(ops.Hc)) else 0.0
        # a-independent forcing (penalty values, pressure lifting, P of lifting)
        self.force = np.zeros(n)
        self.Emat = np.zeros((n, n))
        if self.penalty:
            self.force += tau * (u_bc @ ops.D[:, :n])
            self.Emat = tau * ops.E[:, :n, :n].sum(axis=0)
        self.force -= self.p_lift * ops.Hc[:n]
        self.div_lift = ops.P[:, n:] @ self.lift if ops.n_lift else np.zeros(self.n_p)
        self.L0 = model.nu * (ops.B + ops.BT)
        self.CT = ops.CT1 + ops.CT2
        self.CT_mean = ops.CT1_mean + ops.CT2_mean
        self.set_viscosity(np.zeros(ops.n_nut), np.zeros(ops.n_mean))

    def set_viscosity(self, g: np.ndarray, gbar: np.ndarray) -> None:
        K = self.L0.copy()
        if g.size:
            K += np.tensordot(g, self.CT, axes=1)
        if gbar.size:
            K += np.tensordot(gbar, self.CT_mean, axes=1)
        self.g, self.gbar = g, gbar
        self.K = K

    def extended(self, a: np.ndarray) -> np.ndarray:
        return np.concatenate([a, self.lift]) if self.lift.size else a

    def momentum(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Right-hand side of the momentum rows (without the time derivative)."""
        n = self.n
        ae = self.extended(a)
        conv = np.einsum("ijk,j,k->i", self.ops.C[:n], ae, ae, optimize=True)
        return self.K[:n] @ ae - conv - self.H @ b + self.force - self.Emat @ a

    def momentum_jacobian(self, a: np.ndarray) -> np.ndarray:
        n = self.n
        ae = self.extended(a)
        C = self.ops.C[:n]
        dconv = np.einsum("ijk,k->ij", C[:, :n, :], ae) + np.einsum("ijk,j->ik", C[:, :, :n], ae)
        return self.K[:n, :n] - dconv - self.Emat

    def residual(self, x: np.ndarray, a_old: np.ndarray | None, dt: float | None) -> np.ndarray:
        a, b = x[:self.n], x[self.n:]
        rm = -self.momentum(a, b)
        if dt is not None:
            rm += self.M @ (a - a_old) / dt
        rc = self.P @ a + self.div_lift
        return np.concatenate([rm, rc])

    def jacobian(self, x: np.ndarray, dt: float | None) -> np.ndarray:
        a = x[:self.n]
        J11 = -self.momentum_jacobian(a)
        if dt is not None:
            J11 = J11 + self.M / dt
        top = np.hstack([J11, self.H])
        bot = np.hstack([self.P, np.zeros((self.n_p, self.n_p))])
        return np.vstack([top, bot])


def _solve_linear(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    try:
        lu = sla.lu_factor(J, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:
        raise RomError(f"reduced Jacobian factorization failed: {exc}") from None
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(np.diag(lu[0]))):
        raise RomError("reduced Jacobian is singular (are supremizer modes enabled?)")
    return sla.lu_solve(lu, r)


def newton(system: ReducedSystem, x0: np.ndarray, a_old: np.ndarray | None, dt: float | None,
           tol: float, max_iter: int, update_viscosity=None) -> tuple[np.ndarray, dict]:
    """Damped Newton; ``update_viscosity(x)`` re-evaluates lagged coefficients.

    Converged when ``||R|| <= tol (1 + ||R(0)||)`` after at least one update;
    ``R(0)`` collects the forcing terms.
    """
    x = x0.copy()
    if update_viscosity is not None:
        update_viscosity(x)
    rhs = np.linalg.norm(system.residual(np.zeros_like(x), a_old, dt))
    target = tol * (1.0 + rhs)
    r = system.residual(x, a_old, dt)
    rn = np.linalg.norm(r)
    history = [rn]
    for it in range(max_iter):
        if rn <= target and it > 0:
            return x, {"iterations": it, "residual": rn, "history": history}
        dx = _solve_linear(system.jacobian(x, dt), -r)
        alpha = 1.0
        for _ in range(30):
            xt = x + alpha * dx
            rt = system.residual(xt, a_old, dt)
            rtn = np.linalg.norm(rt)
            if np.isfinite(rtn) and rtn <= (1.0 - 1e-4 * alpha) * rn:
                break
            alpha *= 0.5
        else:
            if rn <= 1e3 * target:
                return x, {"iterations": it, "residual": rn, "history": history}
            raise RomError(f"Newton line search failed (residual {rn:.3e}, target {target:.3e})")
        x = xt
        if update_viscosity is not None:
            update_viscosity(x)
            rt = system.residual(x, a_old, dt)
            rtn = np.linalg.norm(rt)
        r, rn = rt, rtn
        history.append(rn)
    if rn <= target:
        return x, {"iterations": max_iter, "residual": rn, "history": history}
    raise RomError(f"Newton did not converge in {max_iter} iterations "
                   f"(residual {rn:.3e}, target {target:.3e})")


# ---------------------------------------------------------------- solves
def _interp_rows(model: ReducedModel, rows: np.ndarray, mu: float) -> np.ndarray:
    return LinearInterpolant1D(model.mus, rows)(mu)


def initial_condition(model: ReducedModel, mu: float) -> RomState:
    """Linear interpolation in ``mu`` of each sample's first projection coefficients."""
    first = np.arange(model.n_samples) * model.n_times
    a_u = _interp_rows(model, model.coef_a[first], mu)
    b = _interp_rows(model, model.coef_b[first], mu)
    g = _interp_rows(model, model.coef_g[first], mu)
    t0 = float(_interp_rows(model, model.index[first, 1:2], mu)[0])
    a = np.concatenate([a_u, np.zeros(model.ops.n_s)])
    return RomState(a, b, g, mean_coefficients(model, mu), t0, mu)


def nearest_sample_guess(model: ReducedModel, mu: float) -> RomState:
    k = int(np.argmin(np.abs(model.mus - mu)))
    r = k * model.n_times + model.n_times - 1
    a = np.concatenate([model.coef_a[r], np.zeros(model.ops.n_s)])
    return RomState(a, model.coef_b[r].copy(), model.coef_g[r].copy(),
                    mean_coefficients(model, mu), float(model.index[r, 1]), mu)


def steady_solve(model: ReducedModel, mu: float, options: SolverOptions,
                 guess: RomState | None = None) -> tuple[RomState, dict]:
    """Steady reduced solution; ``g`` from the parameter-only interpolant."""
    system = ReducedSystem(model, mu, options.tau)
    if guess is None:
        guess = nearest_sample_guess(model, mu)
    g, gbar = evaluate_viscosity_coeffs(model, "time", mu, guess.t)
    system.set_viscosity(g, gbar)
    x0 = np.concatenate([guess.a, guess.b])
    x, info = newton(system, x0, None, None, options.newton_tol, options.newton_max_iter)
    n = system.n
    return RomState(x[:n], x[n:], g, gbar, guess.t, mu), info


def unsteady_step(model: ReducedModel, system: ReducedSystem, state: RomState,
                  options: SolverOptions) -> tuple[RomState, dict]:
    """One implicit-Euler step; ``g`` is lagged to the latest Newton iterate."""
    dt = options.dt
    t_new = state.t + dt
    n = system.n

    def update(x):
        if options.g_mode == "time":
            g, gbar = evaluate_viscosity_coeffs(model, "time", state.mu, t_new)
        else:
            a = x[:n]
            g, gbar = evaluate_viscosity_coeffs(model, "velocity", state.mu, t_new, a,
                                                (a - state.a) / dt)
        system.set_viscosity(g, gbar)

    x0 = np.concatenate([state.a, state.b])
    x, info = newton(system, x0, state.a, dt, options.newton_tol, options.newton_max_iter, update)
    return RomState(x[:n], x[n:], system.g.copy(), system.gbar.copy(), t_new, state.mu), info


@dataclass
class Trajectory:
    times: np.ndarray
    a: np.ndarray
    b: np.ndarray
    g: np.ndarray
    div: np.ndarray       # ||P a|| / ||a|| per step
    iterations: np.ndarray


def run_unsteady(model: ReducedModel, mu: float, options: SolverOptions,
                 state: RomState | None = None) -> Trajectory:
    """March from the interpolated initial condition to ``options.t_final``."""
    if options.dt is None or options.t_final is None:
        raise RomError("unsteady runs need dt and t_final")
    if state is None:
        state = initial_condition(model, mu)
    system = ReducedSystem(model, mu, options.tau)
    n_steps = int(round((options.t_final - state.t) / options.dt))
    if n_steps < 1:
        raise RomError(f"t_final {options.t_final} is not after the start time {state.t}")
    rows = [state]
    divs = [_div_diag(system, state.a)]
    its = [0]
    for k in range(n_steps):
        try:
            new, info = unsteady_step(model, system, state, options)
        except RomError as exc:
            raise RomError(f"step {k + 1} (t={state.t + options.dt:.5g}): {exc}") from None
        if not np.all(np.isfinite(new.a)):
            raise RomError(f"non-finite coefficients at t={new.t:.5g}")
        state = new
        rows.append(state)
        divs.append(_div_diag(system, state.a))
        its.append(info["iterations"])
    return Trajectory(np.array([s.t for s in rows]), np.array([s.a for s in rows]),
                      np.array([s.b for s in rows]), np.array([s.g for s in rows]),
                      np.array(divs), np.array(its))


def _div_diag(system: ReducedSystem, a: np.ndarray) -> float:
    na = np.linalg.norm(a)
    return float(np.linalg.norm(system.P @ a + system.div_lift) / na) if na > 0 else 0.0


# --------------------------------------------------------- reconstruction
def reconstruct_fields(basis, state: RomState, bc_values: np.ndarray | None = None,
                       p_out: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Packed ``u, p, nu_t`` from coefficients (lifting parts in lifting mode)."""
    u = basis.velocity_space() @ state.a
    p = basis.pressure @ state.b
    nut = basis.nut @ state.g
    if basis.nut_split and state.gbar.size:
        nut = nut + basis.nut_mean @ state.gbar
    if basis.bc_mode == "lifting":
        if bc_values is not None and basis.n_bc:
            u = u + basis.lifting @ bc_values
        if basis.chi_c is not None:
            p = p + p_out * basis.chi_c
    return u, p, nut


def reduced_force(model: ReducedModel, state: RomState) -> np.ndarray:
    """``sum a_i delta_i - sum b_j theta_j`` including lifting contributions."""
    ops = model.ops
    ae = np.concatenate([state.a, model.bc_values(state.mu)]) if ops.n_lift else state.a
    f = ae @ ops.delta - state.b @ ops.theta
    if ops.n_lift:
        f = f - model.p_out * ops.theta_c
    return f
