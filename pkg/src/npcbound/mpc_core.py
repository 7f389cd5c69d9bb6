"""Linear plant model, condensed box-constrained MPC and the fallback law."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, NumericalError
from .qp import solve_box_qp, solve_qp_admm

__all__ = [
    "PlantModel",
    "MpcConfig",
    "InputSequence",
    "CondensedMpc",
    "zoh_discretize",
    "dare_terminal",
    "lqr_gain",
    "steady_state",
    "solve_ocp",
    "fallback_law",
    "predict_state",
    "estimate_lipschitz",
    "msd_plant",
]


def _as_matrix(m, name) -> np.ndarray:
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2 or not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be a finite matrix")
    return a


@dataclass
class PlantModel:
    """Discrete-time plant ``x+ = A x + B u + w`` with ``|u_j| <= u_bar``.

    The disturbance acts on state component ``disturbance_index`` only and is
    bounded by ``w_bar``. ``x_box`` is an optional ``(lo, hi)`` pair of state
    bounds.
    """

    a: np.ndarray
    b: np.ndarray
    w_bar: float
    u_bar: float
    x_box: tuple | None = None
    t_d: float = 0.05
    disturbance_index: int = 1
    position_index: int = 0

    def __post_init__(self):
        self.a = _as_matrix(self.a, "A")
        self.b = _as_matrix(self.b, "B")
        n = self.a.shape[0]
        if self.a.shape != (n, n) or self.b.shape[0] != n:
            raise ConfigError(f"inconsistent shapes A{self.a.shape} B{self.b.shape}")
        if not self.u_bar > 0:
            raise ConfigError("u_bar must be positive")
        if self.w_bar < 0:
            raise ConfigError("w_bar must be nonnegative")
        if not 0 <= self.disturbance_index < n or not 0 <= self.position_index < n:
            raise ConfigError("state index out of range")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


@dataclass
class MpcConfig:
    """Weights and horizon of the finite-horizon OCP.

    ``p_term=None`` selects the DARE solution for ``(A, B, Q, R)``.
    ``terminal_box`` is an optional ``(lo, hi)`` box for the last predicted state.
    """

    q: np.ndarray
    r: np.ndarray
    horizon: int = 20
    p_term: np.ndarray | None = None
    terminal_box: tuple | None = None

    def __post_init__(self):
        self.q = _as_matrix(self.q, "Q")
        self.r = _as_matrix(self.r, "R")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not np.allclose(self.q, self.q.T) or np.linalg.eigvalsh(self.q)[0] < -1e-12:
            raise ConfigError("Q must be symmetric positive semidefinite")
        if not np.allclose(self.r, self.r.T) or np.linalg.eigvalsh(self.r)[0] <= 0:
            raise ConfigError("R must be symmetric positive definite")
        if self.p_term is not None:
            self.p_term = _as_matrix(self.p_term, "P")
            if not np.allclose(self.p_term, self.p_term.T) or np.linalg.eigvalsh(self.p_term)[0] < -1e-9:
                raise ConfigError("P must be symmetric positive semidefinite")


@dataclass
class InputSequence:
    """An MPC input sequence intended for activation at step ``k_star``."""

    id: int
    k_star: int
    inputs: np.ndarray
    x_ss: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_ss: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]


def zoh_discretize(a_cont, b_cont, t_d: float):
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    if not t_d > 0:
        raise ValueError("t_d must be positive")
    a_cont = _as_matrix(a_cont, "A")
    b_cont = _as_matrix(b_cont, "B")
    n, m = b_cont.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a_cont
    aug[:n, n:] = b_cont
    e = sla.expm(aug * t_d)
    return e[:n, :n], e[:n, n:]


def msd_plant(mass=1.0, spring=10.0, damping=0.5, t_d=0.05):
    """Continuous mass-spring-damper matrices discretized with sample time ``t_d``."""
    a_c = np.array([[0.0, 1.0], [-spring / mass, -damping / mass]])
    b_c = np.array([[0.0], [1.0 / mass]])
    return zoh_discretize(a_c, b_c, t_d)


def _riccati_map(a, b, q, r, p):
    bpa = b.T @ p @ a
    return a.T @ p @ a - bpa.T @ np.linalg.solve(r + b.T @ p @ b, bpa) + q


def dare_terminal(a, b, q, r, tol=1e-9, max_iter=100_000):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Uses the Schur method and falls back to fixed-point iteration. Raises
    :class:`NumericalError` when the residual stays above ``tol`` (relative to
    ``max(1, ||P||)``).
    """
    a, b, q, r = (_as_matrix(m, nm) for m, nm in ((a, "A"), (b, "B"), (q, "Q"), (r, "R")))
    p = None
    try:
        p = sla.solve_discrete_are(a, b, q, r)
    except (np.linalg.LinAlgError, ValueError):
        p = None
    if p is not None:
        p = 0.5 * (p + p.T)
        if np.linalg.norm(_riccati_map(a, b, q, r, p) - p) <= tol * max(1.0, np.linalg.norm(p)):
            return p
    p = q.copy()
    for _ in range(max_iter):
        nxt = _riccati_map(a, b, q, r, p)
        nxt = 0.5 * (nxt + nxt.T)
        if not np.all(np.isfinite(nxt)):
            break
        if np.linalg.norm(nxt - p) <= tol * max(1.0, np.linalg.norm(nxt)):
            return nxt
        p = nxt
    raise NumericalError("Riccati iteration did not converge")


def lqr_gain(a, b, r, p) -> np.ndarray:
    """``K = (R + B'PB)^{-1} B'PA`` so that ``u = -K x``."""
    return np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)


def steady_state(model: PlantModel, reference: float):
    """Equilibrium ``(x_ss, u_ss)`` with ``x_ss = A x_ss + B u_ss`` and position ``reference``."""
    n, m = model.n, model.m
    lhs = np.zeros((n + 1, n + m))
    lhs[:n, :n] = model.a - np.eye(n)
    lhs[:n, n:] = model.b
    lhs[n, model.position_index] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = reference
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if np.linalg.norm(lhs @ sol - rhs) > 1e-9 * max(1.0, abs(reference)):
        raise ConfigError(f"no equilibrium with position {reference}")
    return sol[:n], sol[n:]


class CondensedMpc:
    """Condensed OCP in deviation coordinates around an equilibrium pair.

    With ``z = x - x_ss`` and ``v = u - u_ss`` the predicted states are
    ``Z = Phi z0 + Gamma V`` and the OCP becomes
    ``min 0.5 V'HV + (F z0)'V`` subject to ``-u_bar - u_ss <= v_i <= u_bar - u_ss``.
    """

    def __init__(self, model: PlantModel, cfg: MpcConfig, tol: float = 1e-10, backend=None):
        self.model, self.cfg, self.tol, self.backend = model, cfg, tol, backend
        a, b, n, m, N = model.a, model.b, model.n, model.m, cfg.horizon
        self.p_term = dare_terminal(a, b, cfg.q, cfg.r) if cfg.p_term is None else cfg.p_term
        powers = [np.eye(n)]
        for _ in range(N):
            powers.append(a @ powers[-1])
        self.phi = np.vstack(powers[1:])
        gamma = np.zeros((N * n, N * m))
        for i in range(N):
            for j in range(i + 1):
                gamma[i * n : (i + 1) * n, j * m : (j + 1) * m] = powers[i - j] @ b
        self.gamma = gamma
        qbar = sla.block_diag(*([cfg.q] * (N - 1) + [self.p_term]))
        rbar = sla.block_diag(*([cfg.r] * N))
        h = gamma.T @ qbar @ gamma + rbar
        self.H = 0.5 * (h + h.T)
        self.F = gamma.T @ qbar @ self.phi
        self.step = 1.0 / float(np.linalg.eigvalsh(self.H)[-1])
        self._chol = sla.cho_factor(self.H)
        self._gain_full = sla.cho_solve(self._chol, self.F)
        self._bounds = {}
        self.k_lqr = lqr_gain(a, b, cfg.r, self.p_term)
        self.has_state_constraints = model.x_box is not None or cfg.terminal_box is not None

    @property
    def unconstrained_gain(self) -> np.ndarray:
        """First-input feedback gain ``K`` of the unconstrained OCP, ``v0 = -K z0``."""
        return self._gain_full[: self.model.m]

    def unconstrained(self, z0) -> np.ndarray:
        return -(self._gain_full @ np.asarray(z0, dtype=float))

    def input_bounds(self, u_ss):
        m, N, ub = self.model.m, self.cfg.horizon, self.model.u_bar
        u_ss = np.zeros(m) if u_ss is None else np.asarray(u_ss, dtype=float)
        key = u_ss.tobytes()
        if key not in self._bounds:
            self._bounds[key] = (np.tile(-ub - u_ss, N), np.tile(ub - u_ss, N))
        return self._bounds[key]

    def _state_rows(self, z0, x_ss):
        """Stack state/terminal box rows as ``l <= G V <= u``."""
        n, N = self.model.n, self.cfg.horizon
        free = self.phi @ z0 + np.tile(x_ss, N)
        rows, lo, hi = [], [], []
        if self.model.x_box is not None:
            xl, xh = (np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in self.model.x_box)
            rows.append(self.gamma)
            lo.append(np.tile(xl, N) - free)
            hi.append(np.tile(xh, N) - free)
        if self.cfg.terminal_box is not None:
            tl, th = (np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in self.cfg.terminal_box)
            sl = slice((N - 1) * n, N * n)
            rows.append(self.gamma[sl])
            lo.append(tl - free[sl])
            hi.append(th - free[sl])
        return np.vstack(rows), np.concatenate(lo), np.concatenate(hi)

    def solve(self, x0, x_ss=None, u_ss=None, warm=None):
        """Optimal input sequence (absolute inputs, shape ``(N, m)``) and the QP residual."""
        n, m, N = self.model.n, self.model.m, self.cfg.horizon
        x_ss = np.zeros(n) if x_ss is None else np.asarray(x_ss, dtype=float)
        u_ss = np.zeros(m) if u_ss is None else np.asarray(u_ss, dtype=float)
        z0 = np.asarray(x0, dtype=float) - x_ss
        if not np.all(np.isfinite(z0)):
            raise ValueError("initial state must be finite")
        f = self.F @ z0
        lo, hi = self.input_bounds(u_ss)
        if self.has_state_constraints:
            g, gl, gh = self._state_rows(z0, x_ss)
            c = np.vstack([np.eye(N * m), g])
            res = solve_qp_admm(self.H, f, c, np.concatenate([lo, gl]), np.concatenate([hi, gh]), tol=self.tol * 10)
            v = res.x
            resid = res.residual
        else:
            v = self.unconstrained(z0)
            if (v >= lo).all() and (v <= hi).all():
                resid = float(np.abs(self.H @ v + f).max())
            else:
                x_init = np.clip(v, lo, hi) if warm is None else np.asarray(warm, dtype=float)
                res = solve_box_qp(self.H, f, lo, hi, x_init, tol=self.tol, backend=self.backend, step=self.step)
                v, resid = res.x, res.residual
        return v.reshape(N, m) + u_ss, resid

    def first_input(self, x0) -> np.ndarray:
        return self.solve(x0)[0][0]


def solve_ocp(model: PlantModel, cfg: MpcConfig, x0, x_ss=None, u_ss=None, seq_id: int = 0, k_star: int = 0) -> InputSequence:
    """Solve the OCP from ``x0``; raises :class:`InfeasibleError` on empty state constraints."""
    mpc = CondensedMpc(model, cfg)
    inputs, _ = mpc.solve(x0, x_ss, u_ss)
    x_ss = np.zeros(model.n) if x_ss is None else np.asarray(x_ss, dtype=float)
    u_ss = np.zeros(model.m) if u_ss is None else np.asarray(u_ss, dtype=float)
    return InputSequence(seq_id, k_star, inputs, x_ss, u_ss)


def fallback_law(model: PlantModel, cfg: MpcConfig, x, x_ss=None, u_ss=None, k_lqr=None) -> np.ndarray:
    """Saturated LQR ``clip(u_ss - K (x - x_ss), -u_bar, u_bar)``."""
    if k_lqr is None:
        p = dare_terminal(model.a, model.b, cfg.q, cfg.r) if cfg.p_term is None else cfg.p_term
        k_lqr = lqr_gain(model.a, model.b, cfg.r, p)
    x = np.asarray(x, dtype=float)
    x_ss = np.zeros(model.n) if x_ss is None else np.asarray(x_ss, dtype=float)
    u_ss = np.zeros(model.m) if u_ss is None else np.asarray(u_ss, dtype=float)
    return np.clip(u_ss - k_lqr @ (x - x_ss), -model.u_bar, model.u_bar)


def predict_state(model: PlantModel, x_meas, inputs) -> np.ndarray:
    """Nominal roll-out of ``x_meas`` through ``inputs`` (oldest first)."""
    x = np.asarray(x_meas, dtype=float).copy()
    for u in np.asarray(inputs, dtype=float).reshape(-1, model.m):
        x = model.a @ x + model.b @ u
    return x


def estimate_lipschitz(model: PlantModel, cfg: MpcConfig, sample_region, n_samples: int = 500, seed: int = 0, rel_step: float = 1e-4) -> float:
    """Sampled lower estimate of the Lipschitz constant of the first MPC input.

    Each sampled state is paired with a random neighbour at relative distance
    ``rel_step`` of the region width and with the next sample; the largest
    difference quotient over all pairs is returned.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (model.n,)) for v in sample_region)
    rng = np.random.default_rng(seed)
    mpc = CondensedMpc(model, cfg)
    xs = rng.uniform(lo, hi, size=(n_samples, model.n))
    dirs = rng.standard_normal((n_samples, model.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    delta = rel_step * float(np.linalg.norm(hi - lo))
    us = np.array([mpc.first_input(x) for x in xs])
    best = 0.0
    for i in range(n_samples):
        xn = xs[i] + delta * dirs[i]
        best = max(best, float(np.linalg.norm(mpc.first_input(xn) - us[i]) / delta))
        j = (i + 1) % n_samples
        dx = float(np.linalg.norm(xs[j] - xs[i]))
        if dx > 0:
            best = max(best, float(np.linalg.norm(us[j] - us[i]) / dx))
    return best
