"""Expected worst-case error bounds of the three plant-side phases.

All quantities are scalar bounds on ``||x - x_hat||`` (spectral norm). The
three phase errors are

* nominal: roll-out over the delay bound plus open-loop extensions caused by
  packet disorder,
* correction: open loop until a correcting sequence completes a round trip,
* acknowledgement: open loop until the acknowledgement reaches the controller.

Infinite series are truncated at ``tau_bar + truncation_horizon(...)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .delay_model import (
    DelayDistribution,
    dropout_prob,
    p_ack,
    p_correction,
    p_early,
    p_late,
    truncation_horizon,
)

__all__ = [
    "ErrorParams",
    "rollout_error",
    "open_loop_error",
    "nominal_error",
    "correction_error",
    "ack_error",
    "series_limit",
]


def _spectral_norm(m) -> float:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return float(np.linalg.norm(m, 2))


@dataclass
class ErrorParams:
    """Constants of the error calculus.

    ``a_pow_norms[i]`` holds ``||A^i||``; the table grows on demand when
    ``a_matrix`` is known. ``n_u`` is the number of inputs left in a fresh
    sequence; the calculus assumes a full sequence (``n_u == horizon_N``).
    """

    a_norm: float
    b_norm: float
    lipschitz_L: float
    w_bar: float
    u_bar: float
    horizon_N: int
    n_u: int | None = None
    a_pow_norms: list = field(default_factory=lambda: [1.0])
    a_matrix: np.ndarray | None = None
    threshold: float = 1e-3

    def __post_init__(self):
        if self.n_u is None:
            self.n_u = self.horizon_N
        if min(self.a_norm, self.b_norm, self.lipschitz_L, self.w_bar, self.u_bar) < 0:
            raise ValueError("norms and bounds must be nonnegative")
        if self.horizon_N < 1 or not 0 <= self.n_u <= self.horizon_N:
            raise ValueError("need horizon_N >= 1 and 0 <= n_u <= horizon_N")
        self.a_pow_norms = [float(v) for v in self.a_pow_norms]
        if not self.a_pow_norms or self.a_pow_norms[0] != 1.0:
            raise ValueError("a_pow_norms[0] must be 1")
        if self.a_matrix is not None:
            self.a_matrix = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
            self._power = np.linalg.matrix_power(self.a_matrix, len(self.a_pow_norms) - 1)
        self._prefix = [0.0]

    @classmethod
    def from_matrices(cls, a, b, lipschitz_L, w_bar, u_bar, horizon_N, threshold=1e-3) -> "ErrorParams":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return cls(
            a_norm=_spectral_norm(a),
            b_norm=_spectral_norm(b),
            lipschitz_L=float(lipschitz_L),
            w_bar=float(w_bar),
            u_bar=float(u_bar),
            horizon_N=int(horizon_N),
            a_matrix=a,
            threshold=threshold,
        )

    @property
    def lam(self) -> float:
        """Open-loop growth factor ||A|| + ||B|| L."""
        return self.a_norm + self.b_norm * self.lipschitz_L

    def a_pow_norm(self, i: int) -> float:
        if i < 0:
            raise ValueError("negative matrix power")
        while i >= len(self.a_pow_norms):
            if self.a_matrix is None:
                # no matrix to extend from: fall back to submultiplicativity
                self.a_pow_norms.append(self.a_pow_norms[-1] * self.a_norm)
                continue
            self._power = self._power @ self.a_matrix
            self.a_pow_norms.append(_spectral_norm(self._power))
        return self.a_pow_norms[i]

    def a_pow_sum(self, l: int) -> float:
        """sum_{i=0}^{l-1} ||A^i|| (prefix sums cached)."""
        while len(self._prefix) <= l:
            i = len(self._prefix) - 1
            self._prefix.append(self._prefix[-1] + self.a_pow_norm(i))
        return self._prefix[l]


def rollout_error(p: ErrorParams, l: int, eps0: float = 0.0) -> float:
    """Error bound after rolling the nominal model out ``l`` steps."""
    if l < 0 or eps0 < 0:
        raise ValueError("need l >= 0 and eps0 >= 0")
    head = 0.0 if eps0 == 0.0 else _power_times(p.a_norm, l, eps0)
    return head + p.w_bar * p.a_pow_sum(l)


def _power_times(x: float, l: int, c: float) -> float:
    """``x**l * c`` that saturates to inf instead of raising on overflow."""
    try:
        return x**l * c
    except OverflowError:
        return math.inf


def _geometric_sum(x: float, l: int) -> float:
    """sum_{i=0}^{l-1} x**i."""
    if l <= 0:
        return 0.0
    if abs(x - 1.0) < 1e-12:
        return float(l)
    return (_power_times(x, l, 1.0) - 1.0) / (x - 1.0)


def open_loop_error(p: ErrorParams, l: int, eps0: float = 0.0) -> float:
    """Error bound after ``l`` steps of reusing a stale sequence.

    While inputs remain (``l < n_u``) the mismatch grows with ``lam``; once the
    sequence is exhausted the fallback-input mismatch is bounded by
    ``2 ||B|| u_bar``.
    """
    if l < 0 or eps0 < 0:
        raise ValueError("need l >= 0 and eps0 >= 0")
    if l < p.n_u:
        head = 0.0 if eps0 == 0.0 else _power_times(p.lam, l, eps0)
        return head + p.w_bar * _geometric_sum(p.lam, l)
    n = p.horizon_N
    inner = (0.0 if eps0 == 0.0 else _power_times(p.lam, n - 1, eps0)) + p.w_bar * _geometric_sum(p.lam, n - 1)
    # exponent clamped at 0 for n_u < N, where l - N may be negative
    head = p.a_pow_norm(max(l - n, 0)) * inner
    return head + (p.w_bar + 2.0 * p.b_norm * p.u_bar) * p.a_pow_sum(l)


def series_limit(d: DelayDistribution, p: ErrorParams, tau_bar: int) -> int:
    """Last index kept in the truncated series for this delay bound."""
    p_d = dropout_prob(d, tau_bar)
    return tau_bar + truncation_horizon(p_d, tau_bar, p.threshold)


def _check_feasible(d: DelayDistribution, tau_bar: int):
    if tau_bar < 0:
        raise ValueError("tau_bar must be >= 0")
    if d.F(tau_bar) <= 0.0:
        raise ValueError(f"no packet can arrive within tau_bar={tau_bar}")


def nominal_error(d: DelayDistribution, p: ErrorParams, tau_bar: int, limit: int | None = None) -> float:
    """Expected nominal-mode error: roll-out plus disorder-induced open loop."""
    _check_feasible(d, tau_bar)
    limit = series_limit(d, p, tau_bar) if limit is None else limit
    e_r = rollout_error(p, tau_bar)
    total = e_r
    # both disorder probabilities vanish beyond the support of the pmf
    for i in range(1, min(limit, d.k_max + 1) + 1):
        w = p_early(d, i, tau_bar) + p_late(d, i, tau_bar)
        if w:
            total += w * open_loop_error(p, i, e_r)
    return total


def _recovery_error(d, p, tau_bar, weight, limit, eps_n):
    if tau_bar < 1:
        raise ValueError("recovery errors need tau_bar >= 1")
    _check_feasible(d, tau_bar)
    p_d = dropout_prob(d, tau_bar)
    if p_d >= 1.0:
        raise ValueError(f"dropout probability is 1 at tau_bar={tau_bar}")
    limit = series_limit(d, p, tau_bar) if limit is None else limit
    if eps_n is None:
        eps_n = nominal_error(d, p, tau_bar)
    eps_o = open_loop_error(p, tau_bar, eps_n)
    total = eps_o / tau_bar
    if p_d == 0.0:
        return total
    for i in range(1, limit + 1):
        total += weight(p_d, i) * (open_loop_error(p, tau_bar + i, eps_n) - eps_o)
    return total


def correction_error(d: DelayDistribution, p: ErrorParams, tau_bar: int, limit: int | None = None, eps_n: float | None = None) -> float:
    """Expected per-step error while correcting an inconsistent prediction."""
    return _recovery_error(d, p, tau_bar, p_correction, limit, eps_n)


def ack_error(d: DelayDistribution, p: ErrorParams, tau_bar: int, limit: int | None = None, eps_n: float | None = None) -> float:
    """Expected per-step error while the correction is being acknowledged."""
    return _recovery_error(d, p, tau_bar, p_ack, limit, eps_n)
