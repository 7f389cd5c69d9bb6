"""Stationary analysis of the five-state nominal/recovery chain.

States: S1 nominal/nominal, S2 plant correcting, S3 both correcting,
S4 plant acknowledging with controller correcting, S5 plant acknowledging
with controller back to nominal (plant phase first, controller phase second).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NoRecoveryError", "ModeWeights", "transition_matrix", "stationary", "phase_weights"]


class NoRecoveryError(ValueError):
    """The chain never returns to nominal operation (p_d = 1)."""


@dataclass(frozen=True)
class ModeWeights:
    pi: np.ndarray
    rho: np.ndarray


def transition_matrix(p_d: float) -> np.ndarray:
    """Row-stochastic 5x5 transition matrix for per-step dropout probability ``p_d``."""
    if not 0.0 <= p_d <= 1.0:
        raise ValueError("p_d must lie in [0, 1]")
    q = 1.0 - p_d
    return np.array(
        [
            [q, p_d, 0.0, 0.0, 0.0],
            [0.0, p_d, q, 0.0, 0.0],
            [0.0, 0.0, p_d, q, 0.0],
            [0.0, 0.0, 0.0, p_d, q],
            [q, p_d, 0.0, 0.0, 0.0],
        ]
    )


def phase_weights(pi) -> np.ndarray:
    """Collapse the five joint states onto the three plant phases."""
    pi = np.asarray(pi, dtype=float)
    return np.array([pi[0], pi[1] + pi[2], pi[3] + pi[4]])


def stationary(p_d: float) -> ModeWeights:
    """Closed-form stationary distribution and plant-phase weights."""
    if not 0.0 <= p_d <= 1.0:
        raise ValueError("p_d must lie in [0, 1]")
    if p_d == 1.0:
        raise NoRecoveryError("p_d = 1: the chain never returns to nominal")
    den = 2.0 * p_d + 1.0
    mid = p_d / den
    pi = np.array([(1.0 - p_d) ** 2 / den, mid, mid, mid, p_d * (1.0 - p_d) / den])
    return ModeWeights(pi=pi, rho=phase_weights(pi))
