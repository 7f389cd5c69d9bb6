"""Performance index over delay bounds and its minimizer."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .delay_model import DelayDistribution, dropout_prob, truncation_horizon
from .errors import InfeasibleError
from .error_calculus import ErrorParams, ack_error, correction_error, nominal_error
from .mode_chain import stationary

__all__ = [
    "InfeasibleRangeError",
    "IndexBreakdown",
    "performance_index",
    "is_feasible",
    "default_tau_range",
    "optimal_bound",
    "breakdown_csv",
    "is_unimodal",
]

CSV_COLUMNS = ["tau_bar", "p_d", "rho1", "rho2", "rho3", "eps_n", "eps_c", "eps_a", "eps_total"]


class InfeasibleRangeError(InfeasibleError, ValueError):
    """No delay bound in the requested range admits a finite index."""

    def __init__(self, message, rejected=()):
        super().__init__(message)
        self.rejected = list(rejected)


@dataclass(frozen=True)
class IndexBreakdown:
    tau_bar: int
    p_d: float
    eps_n: float
    eps_c: float
    eps_a: float
    rho: tuple
    eps_total: float

    def row(self) -> list:
        return [self.tau_bar, self.p_d, *self.rho, self.eps_n, self.eps_c, self.eps_a, self.eps_total]


def is_feasible(d: DelayDistribution, tau_bar: int) -> bool:
    return tau_bar >= 1 and d.F(tau_bar) > 0.0 and dropout_prob(d, tau_bar) < 1.0


def performance_index(d: DelayDistribution, p: ErrorParams, tau_bar: int) -> IndexBreakdown:
    """Phase errors weighted by the stationary phase occupancies."""
    if not is_feasible(d, tau_bar):
        raise InfeasibleRangeError(f"tau_bar={tau_bar} is infeasible", [tau_bar])
    p_d = dropout_prob(d, tau_bar)
    rho = stationary(p_d).rho
    eps_n = nominal_error(d, p, tau_bar)
    eps_c = correction_error(d, p, tau_bar, eps_n=eps_n)
    eps_a = ack_error(d, p, tau_bar, eps_n=eps_n)
    total = float(rho @ np.array([eps_n, eps_c, eps_a]))
    return IndexBreakdown(tau_bar, p_d, eps_n, eps_c, eps_a, tuple(float(r) for r in rho), total)


def default_tau_range(d: DelayDistribution, p: ErrorParams) -> tuple[int, int]:
    """[1, k_max + c] with c the truncation horizon at tau_bar = 1."""
    p_d = dropout_prob(d, 1)
    c = truncation_horizon(p_d, 1, p.threshold) if p_d < 1.0 else 0
    return 1, max(1, d.k_max + c)


def optimal_bound(d: DelayDistribution, p: ErrorParams, tau_range: tuple[int, int] | None = None):
    """Exhaustive minimization of the index; ties go to the smaller bound.

    The search domain is ``[1, k_max + c]`` (see :func:`default_tau_range`);
    requested bounds outside it, or with ``F(tau_bar) = 0``, are rejected.

    Returns ``(tau_star, table)`` where ``table`` lists the breakdown of every
    feasible bound in the range.
    """
    dom_lo, dom_hi = default_tau_range(d, p)
    lo, hi = (dom_lo, dom_hi) if tau_range is None else tau_range
    if hi < lo:
        raise InfeasibleRangeError(f"empty range [{lo}, {hi}]")
    table, rejected = [], []
    for tau in range(lo, hi + 1):
        # bounds past k_max + c add nothing but buffering delay; they are outside the domain
        if dom_lo <= tau <= dom_hi and is_feasible(d, tau):
            table.append(performance_index(d, p, tau))
        else:
            rejected.append(tau)
    if not table:
        raise InfeasibleRangeError(
            f"no feasible delay bound in [{lo}, {hi}] (domain [{dom_lo}, {dom_hi}]); rejected {_ranges(rejected)}",
            rejected,
        )
    best = min(table, key=lambda b: (b.eps_total, b.tau_bar))
    return best.tau_bar, table


def _ranges(values) -> str:
    """Compact text for a sorted list of integers, e.g. ``1-3,7``."""
    parts, start = [], None
    for i, v in enumerate(values):
        if start is None:
            start = v
        if i + 1 == len(values) or values[i + 1] != v + 1:
            parts.append(str(start) if start == v else f"{start}-{v}")
            start = None
    return ",".join(parts)


def breakdown_csv(table, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for b in table:
        w.writerow([b.tau_bar] + [repr(float(v)) for v in b.row()[1:]])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def is_unimodal(values) -> bool:
    """True when successive differences change sign at most once (down, then up)."""
    diffs = np.sign(np.diff(np.asarray(values, dtype=float)))
    diffs = diffs[diffs != 0]
    return int(np.count_nonzero(np.diff(diffs) != 0)) <= 1 and (diffs.size == 0 or diffs[0] <= 0 or np.all(diffs > 0))
