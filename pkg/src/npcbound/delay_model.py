"""Discrete round-trip-time distributions and the channel-event probabilities
derived from them.

Delays are measured in sampling steps. A :class:`DelayDistribution` stores a
finite pmf ``p[k] = Pr(RTT = k)`` for ``k = 0..k_max``; every probability used by
the error calculus is a pure function of that pmf and the delay bound.
"""
from __future__ import annotations

import csv
import io
import math
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import lognorm

__all__ = [
    "InvalidDistributionError",
    "DiscretizationRule",
    "DelayDistribution",
    "from_pmf",
    "from_lognormal",
    "from_samples",
    "discretize",
    "dropout_prob",
    "p_early",
    "p_freshest",
    "p_late",
    "p_correction",
    "p_ack",
    "truncation_horizon",
    "read_csv",
    "write_csv",
]

_NORM_TOL = 1e-12


class InvalidDistributionError(ValueError):
    """Raised when weights cannot form a probability distribution."""


@dataclass(frozen=True)
class DiscretizationRule:
    """How a continuous delay (in steps) is mapped to an integer step count.

    ``mode`` is one of ``round``, ``ceil`` or ``floor``; ``offset`` whole steps
    are added afterwards. Upper-tail bins holding less than
    ``tail_mass_cutoff`` in total are dropped and the pmf renormalized.
    """

    mode: str = "ceil"
    offset: int = 0
    tail_mass_cutoff: float = 1e-4

    def __post_init__(self):
        if self.mode not in ("round", "ceil", "floor"):
            raise ValueError(f"unknown discretization mode {self.mode!r}")
        if self.offset < 0:
            raise ValueError("offset must be >= 0")
        if not 0.0 < self.tail_mass_cutoff < 1.0:
            raise ValueError("tail_mass_cutoff must lie in (0, 1)")

    def as_dict(self) -> dict:
        return {"mode": self.mode, "offset": self.offset, "tail_mass_cutoff": self.tail_mass_cutoff}


@dataclass(frozen=True)
class DelayDistribution:
    """Finite-support pmf over integer delays ``0..k_max``."""

    pmf: np.ndarray
    cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=float).copy()
        if p.ndim != 1 or p.size == 0:
            raise InvalidDistributionError("pmf must be a nonempty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidDistributionError("pmf entries must be finite and nonnegative")
        if abs(p.sum() - 1.0) > _NORM_TOL:
            raise InvalidDistributionError(f"pmf sums to {p.sum()!r}, not 1")
        # trailing zeros carry no information and would inflate k_max
        last = int(np.flatnonzero(p)[-1])
        p = p[: last + 1]
        p.setflags(write=False)
        # rounding can push a partial sum past 1 before the tail
        c = np.minimum(np.cumsum(p), 1.0)
        c[-1] = 1.0
        c.setflags(write=False)
        object.__setattr__(self, "pmf", p)
        object.__setattr__(self, "cdf", c)
        object.__setattr__(self, "_hash", hash(p.tobytes()))

    @property
    def k_max(self) -> int:
        return self.pmf.size - 1

    def p(self, k: int) -> float:
        """Pr(RTT = k); zero outside the support."""
        if 0 <= k <= self.k_max:
            return float(self.pmf[k])
        return 0.0

    def F(self, i: int) -> float:
        """Pr(RTT <= i)."""
        if i < 0:
            return 0.0
        if i >= self.k_max:
            return 1.0
        return float(self.cdf[i])

    def mean(self) -> float:
        return float(np.arange(self.pmf.size) @ self.pmf)

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draw(s) from the pmf."""
        u = rng.random(size)
        return np.searchsorted(self.cdf, u, side="right").clip(max=self.k_max)

    def __eq__(self, other):
        if not isinstance(other, DelayDistribution):
            return NotImplemented
        return np.array_equal(self.pmf, other.pmf)

    def __hash__(self):
        return self._hash


def from_pmf(weights: Sequence[float]) -> DelayDistribution:
    """Normalize nonnegative weights into a distribution.

    >>> from_pmf([1, 1, 2]).pmf.tolist()
    [0.25, 0.25, 0.5]
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidDistributionError("weights must be a nonempty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidDistributionError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise InvalidDistributionError("at least one weight must be positive")
    return DelayDistribution(w / total)


def discretize(x, rule: DiscretizationRule):
    """Map continuous delays (steps) to integer steps under ``rule``."""
    x = np.asarray(x, dtype=float)
    if rule.mode == "round":
        k = np.floor(x + 0.5)
    elif rule.mode == "ceil":
        k = np.ceil(x)
    else:
        k = np.floor(x)
    return k.astype(np.int64) + rule.offset


def _bin_edges(k: np.ndarray, mode: str):
    # continuous interval mapped onto integer k before the offset
    if mode == "round":
        return k - 0.5, k + 0.5
    if mode == "ceil":
        return k - 1.0, k.astype(float)
    return k.astype(float), k + 1.0


def from_lognormal(mu: float, sigma: float, rule: DiscretizationRule = DiscretizationRule()) -> DelayDistribution:
    """Discretized log-normal RTT distribution.

    Each integer bin receives the exact log-normal mass of the interval that
    ``rule`` maps onto it. The upper tail is cut where it holds less than
    ``rule.tail_mass_cutoff`` and the remainder renormalized.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    dist = lognorm(s=sigma, scale=math.exp(mu))
    # grow the grid until the uncovered tail is negligible
    hi = max(8, int(math.ceil(dist.ppf(1.0 - rule.tail_mass_cutoff * 1e-3))) + 2)
    k = np.arange(0, hi + 1)
    lo_e, hi_e = _bin_edges(k, rule.mode)
    lo_e = np.maximum(lo_e, 0.0)
    hi_e = np.maximum(hi_e, 0.0)
    # survival differences are accurate in the tail, cdf differences near 0
    mass = np.where(
        hi_e <= dist.median(),
        dist.cdf(hi_e) - dist.cdf(lo_e),
        dist.sf(lo_e) - dist.sf(hi_e),
    )
    mass = np.clip(mass, 0.0, None)
    tail = np.cumsum(mass[::-1])[::-1] + dist.sf(hi_e[-1])
    # keep bins 0..k_max where everything above k_max is below the cutoff
    beyond = np.concatenate([tail[1:], [dist.sf(hi_e[-1])]])
    k_max = int(np.argmax(beyond < rule.tail_mass_cutoff))
    p = mass[: k_max + 1]
    if p.sum() <= 0:
        # sigma so small that all mass sits in one bin beyond numerical reach
        p = np.zeros(int(discretize(math.exp(mu), DiscretizationRule(rule.mode))) + 1)
        p[-1] = 1.0
    p = np.concatenate([np.zeros(rule.offset), p])
    return from_pmf(p)


def from_samples(samples: Iterable[int]) -> DelayDistribution:
    """Empirical distribution of observed integer delays."""
    s = np.asarray(list(samples))
    if s.size == 0:
        raise InvalidDistributionError("no samples given")
    if np.any(s < 0) or not np.all(np.equal(np.mod(s, 1), 0)):
        raise InvalidDistributionError("samples must be nonnegative integers")
    return from_pmf(np.bincount(s.astype(np.int64)))


def dropout_prob(d: DelayDistribution, tau_bar: int) -> float:
    """Probability that a round trip exceeds the delay bound: 1 - F(tau_bar)."""
    if tau_bar < 0:
        raise ValueError("tau_bar must be >= 0")
    return max(0.0, 1.0 - d.F(tau_bar))


def p_early(d: DelayDistribution, i: int, tau_bar: int) -> float:
    """Probability that the next packet overtakes the previous one by ``i`` steps."""
    if i < 0:
        raise ValueError("i must be >= 0")
    if not 1 <= i <= tau_bar - 1:
        return 0.0
    hi = min(tau_bar - i, d.k_max - i)
    if hi < 0:
        return 0.0
    return float(np.dot(d.pmf[i : i + hi + 1], d.pmf[: hi + 1]))


@lru_cache(maxsize=256)
def _freshest_vector(d: DelayDistribution, tau_bar: int) -> np.ndarray:
    p = np.zeros(tau_bar + 1)
    top = min(tau_bar, d.k_max) + 1
    p[:top] = d.pmf[:top]
    miss = 1.0 - p
    # prod_{r<k} (1 - p_r) for k = 0..tau_bar
    before = np.concatenate([[1.0], np.cumprod(miss)[:-1]])
    num = p * before
    den = num.sum()  # telescopes to 1 - prod_{r<=tau_bar}(1 - p_r)
    out = np.zeros(tau_bar + 1) if den <= 0.0 else num / den
    out.setflags(write=False)
    return out


def p_freshest(d: DelayDistribution, k: int, tau_bar: int) -> float:
    """Probability that the packet with delay ``k`` is currently the most recent one."""
    if not 0 <= k <= tau_bar:
        raise ValueError("need 0 <= k <= tau_bar")
    return float(_freshest_vector(d, tau_bar)[k])


@lru_cache(maxsize=256)
def _late_vector(d: DelayDistribution, tau_bar: int) -> np.ndarray:
    # entry i-1 holds p_late(i) for i = 1..k_max+1; later entries are exactly 0
    pf = _freshest_vector(d, tau_bar)[: d.k_max + 1]
    n = d.k_max + 1
    surv = 1.0 - np.array([d.F(j) for j in range(2 * n + 1)])
    out = np.zeros(n)
    for k, w in enumerate(pf):
        if w:
            out += w * np.cumprod(surv[k : k + n])
    out.setflags(write=False)
    return out


def p_late(d: DelayDistribution, i: int, tau_bar: int) -> float:
    """Probability of ``i`` further steps without a newer packet (late or missing packets).

    Returns 0 when no packet can arrive within the bound, i.e. F(tau_bar) = 0.
    """
    if i < 1:
        raise ValueError("i must be >= 1")
    vec = _late_vector(d, tau_bar)
    return float(vec[i - 1]) if i <= vec.size else 0.0


def p_correction(p_d: float, i: int) -> float:
    """Pr(T_c = i): failed attempts before two successful transmissions."""
    if not 0.0 <= p_d < 1.0:
        raise ValueError("p_d must lie in [0, 1)")
    if i < 0:
        return 0.0
    return (1.0 - p_d) ** 2 * (i + 1) * p_d**i


def p_ack(p_d: float, i: int) -> float:
    """Pr(T_a = i): failed attempts before one successful transmission."""
    if not 0.0 <= p_d < 1.0:
        raise ValueError("p_d must lie in [0, 1)")
    if i < 0:
        return 0.0
    return (1.0 - p_d) * p_d**i


def truncation_horizon(p_d: float, tau_bar: int, threshold: float = 1e-3) -> int:
    """Smallest c >= 0 with ``p_d ** (tau_bar + c) < threshold``."""
    if not 0.0 <= p_d < 1.0:
        raise ValueError("p_d must lie in [0, 1)")
    if p_d == 0.0:
        return 0
    c = 0
    while p_d ** (tau_bar + c) >= threshold:
        c += 1
    return c


def write_csv(d: DelayDistribution, path=None) -> str:
    """Serialize as ``k,p_k`` rows; returns the text and writes it when ``path`` is given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "p_k"])
    for k, pk in enumerate(d.pmf):
        w.writerow([k, repr(float(pk))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(source) -> DelayDistribution:
    """Parse a ``k,p_k`` table from a path or a text stream."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or set(rows[0]) != {"k", "p_k"}:
        raise InvalidDistributionError("expected header 'k,p_k'")
    ks = [int(r["k"]) for r in rows]
    if min(ks) < 0:
        raise InvalidDistributionError("negative delay in table")
    p = np.zeros(max(ks) + 1)
    for k, r in zip(ks, rows):
        p[k] += float(r["p_k"])
    total = p.sum()
    if abs(total - 1.0) > 1e-9:
        raise InvalidDistributionError(f"table probabilities sum to {total!r}")
    # tables written by write_csv are already normalized; keep them bit-exact
    return DelayDistribution(p) if abs(total - 1.0) <= _NORM_TOL else from_pmf(p)
