"""Seeded packet-level simulation of the networked predictive control loop.

One logical clock drives a plant with a sequence buffer and logic unit, an
uplink carrying timestamped measurements, a remote MPC controller with
prediction and recovery logic, and a downlink carrying input sequences.

Per step ``t`` the order of events is

1. the controller handles measurements sent earlier that arrive at ``t``,
2. input sequences with ``deliver_at <= t`` enter the plant buffer,
3. the logic unit picks ``u_t`` (fresh sequence, reuse, or fallback),
4. the sensor samples ``x_t``; an uplink delay of zero is handled at once,
5. the plant advances with a bounded disturbance.

Consistency is checked on *tokens*: the plant logs, for every step, which
sequence element (or fallback under which sequence's frame) it applied. Each
sequence carries the tokens its prediction assumed, and the plant accepts it
only if they match its log.
"""
from __future__ import annotations

import bisect
import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .delay_model import DelayDistribution, DiscretizationRule, from_lognormal
from .errors import ConfigError, InfeasibleError, NumericalError
from .mpc_core import CondensedMpc, InputSequence, MpcConfig, PlantModel, steady_state

__all__ = [
    "DelaySpec",
    "NpcConfig",
    "Packet",
    "Measurement",
    "PlannedSequence",
    "ModeState",
    "EpisodeResult",
    "BatchStats",
    "LogNormalChannel",
    "ScriptedChannel",
    "sample_rtt",
    "split_rtt",
    "run_episode",
    "run_batch",
    "run_streams",
    "joint_label",
    "ALLOWED_TRANSITIONS",
    "TRACE_COLUMNS",
    "trace_csv",
]

NOMINAL, CORRECTION, ACK = "nominal", "correction", "ack"
PHASE_CODES = {NOMINAL: 1, CORRECTION: 2, ACK: 3}
FRESH, REUSE, FALLBACK = "fresh", "reuse", "fallback"
TRACE_COLUMNS = ["step", "x1", "x2", "u", "phase", "fresh", "Nu_left"]

_JOINT = {
    (NOMINAL, NOMINAL): 1,
    (CORRECTION, NOMINAL): 2,
    (CORRECTION, CORRECTION): 3,
    (ACK, CORRECTION): 4,
    (ACK, NOMINAL): 5,
}
# nonzero off-diagonal entries of the five-state transition matrix
ALLOWED_TRANSITIONS = frozenset({(1, 2), (2, 3), (3, 4), (4, 5), (5, 1), (5, 2)})


def joint_label(plant_phase: str, controller_phase: str) -> int:
    """S1..S5 label for a (plant, controller) phase pair; 0 if not one of the five."""
    return _JOINT.get((plant_phase, controller_phase), 0)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DelaySpec:
    """Log-normal RTT law active from ``start_step`` on."""

    start_step: int
    mu: float
    sigma: float
    rule: DiscretizationRule = DiscretizationRule()

    def distribution(self) -> DelayDistribution:
        return from_lognormal(self.mu, self.sigma, self.rule)


def _active(schedule, step):
    """Value of a sorted ``(start, value)`` schedule at ``step``."""
    current = schedule[0][1]
    for start, value in schedule:
        if start <= step:
            current = value
        else:
            break
    return current


@dataclass
class NpcConfig:
    plant: PlantModel
    mpc: MpcConfig
    tau_bar_schedule: list = field(default_factory=lambda: [(0, 4)])
    delay_spec: list = field(default_factory=lambda: [DelaySpec(0, 0.5, 0.5)])
    beta_split: tuple = (2.0, 2.0)
    seed: int = 0
    duration: int = 120
    reference_schedule: list = field(default_factory=lambda: [(0, 1.0)])
    warmup: int = 0
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.tau_bar_schedule = [(int(s), int(t)) for s, t in self.tau_bar_schedule]
        self.reference_schedule = [(int(s), float(r)) for s, r in self.reference_schedule]
        self.delay_spec = [d if isinstance(d, DelaySpec) else DelaySpec(*d) for d in self.delay_spec]
        for name, sched in (
            ("tau_bar_schedule", self.tau_bar_schedule),
            ("delay_spec", [(d.start_step, d) for d in self.delay_spec]),
            ("reference_schedule", self.reference_schedule),
        ):
            if not sched:
                raise ConfigError(f"{name} is empty")
            starts = [s for s, _ in sched]
            if starts != sorted(starts):
                raise ConfigError(f"{name} must be sorted by step")
        if self.tau_bar_schedule[0][0] != 0 or self.delay_spec[0].start_step != 0:
            raise ConfigError("delay bound and delay schedules must start at step 0")
        if any(t < 1 for _, t in self.tau_bar_schedule):
            raise ConfigError("tau_bar must be >= 1")
        if self.duration < 1:
            raise ConfigError("duration must be >= 1")
        if not (self.beta_split[0] > 0 and self.beta_split[1] > 0):
            raise ConfigError("beta split parameters must be positive")
        if not 0 <= self.warmup < self.duration:
            raise ConfigError("warmup must lie in [0, duration)")

    def tau_bar(self, step: int) -> int:
        return _active(self.tau_bar_schedule, step)

    def reference(self, step: int) -> float:
        if step < self.reference_schedule[0][0]:
            return 0.0
        return _active(self.reference_schedule, step)

    def with_tau(self, schedule) -> "NpcConfig":
        """Copy with a different delay-bound schedule (an int means constant)."""
        if isinstance(schedule, (int, np.integer)):
            schedule = [(0, int(schedule))]
        return NpcConfig(
            self.plant, self.mpc, list(schedule), list(self.delay_spec), self.beta_split,
            self.seed, self.duration, list(self.reference_schedule), self.warmup, self.x0,
        )


# --------------------------------------------------------------------------
# channel


def sample_rtt(rng: np.random.Generator, dist: DelayDistribution) -> int:
    """One RTT draw (steps) by inverse CDF of the discretized law."""
    return int(dist.sample(rng))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_rtt(rng: np.random.Generator | None, rtt: int, alpha: float = 2.0, beta_p: float = 2.0, share: float | None = None):
    """Split an RTT into uplink and downlink delays with a Beta-distributed uplink share."""
    if rtt < 0:
        raise ValueError("rtt must be >= 0")
    if share is None:
        share = float(rng.beta(alpha, beta_p))
    tau_sc = min(rtt, max(0, _round_half_up(share * rtt)))
    return tau_sc, rtt - tau_sc


def run_streams(seed: int, run_index: int = 0):
    """Independent generators (rtt, split, noise) for one run of a batch."""
    ss = np.random.SeedSequence(seed, spawn_key=(run_index,))
    return [np.random.default_rng(s) for s in ss.spawn(3)]


class LogNormalChannel:
    """RTT per sent measurement from the scheduled log-normal laws.

    The RTT uniform, the split share and the disturbance use separate streams,
    so runs that differ only in the delay bound see identical channel draws.
    """

    def __init__(self, cfg: NpcConfig, rtt_rng, split_rng, block: int = 4096):
        self.cfg = cfg
        self.rtt_rng, self.split_rng = rtt_rng, split_rng
        self._dists = [(d.start_step, d.distribution()) for d in cfg.delay_spec]
        self._cdfs = [(s, (d.cdf.tolist(), d.k_max)) for s, d in self._dists]
        # block draws consume each stream exactly like per-step scalar draws
        self._block = block
        self._u, self._share, self._i = [], [], block

    def distribution(self, step: int) -> DelayDistribution:
        return _active(self._dists, step)

    def __call__(self, step: int):
        if self._i == self._block:
            self._u = self.rtt_rng.random(self._block).tolist()
            self._share = self.split_rng.beta(*self.cfg.beta_split, size=self._block).tolist()
            self._i = 0
        u, share = self._u[self._i], self._share[self._i]
        self._i += 1
        cdf, k_max = _active(self._cdfs, step)
        rtt = min(bisect.bisect_right(cdf, u), k_max)
        tau_sc, tau_ca = split_rtt(None, rtt, share=share)
        return rtt, tau_sc, tau_ca


class ScriptedChannel:
    """Hand-placed delays: ``delays[step] = (tau_sc, tau_ca)``; missing steps use ``default``."""

    def __init__(self, delays: dict | Sequence, default=(0, 0)):
        if not isinstance(delays, dict):
            delays = dict(enumerate(delays))
        self.delays = {int(k): (int(v[0]), int(v[1])) for k, v in delays.items()}
        self.default = default

    def __call__(self, step: int):
        sc, ca = self.delays.get(step, self.default)
        return sc + ca, sc, ca


# --------------------------------------------------------------------------
# packets and traces


@dataclass(frozen=True)
class Measurement:
    x: np.ndarray
    token: tuple
    ack: bool
    plant_phase: str


@dataclass(frozen=True)
class PlannedSequence:
    seq: InputSequence
    kind: str
    origin: int
    assumed: tuple
    predicted: np.ndarray


@dataclass(frozen=True)
class Packet:
    kind: str  # "measurement" or "input_sequence"
    timestamp: int
    payload: object
    deliver_at: int
    sent_at: int
    ca_delay: int = 0


@dataclass
class ModeState:
    plant_phase: str = NOMINAL
    controller_phase: str = NOMINAL

    @property
    def joint(self) -> int:
        return joint_label(self.plant_phase, self.controller_phase)


@dataclass
class EpisodeResult:
    states: np.ndarray
    inputs: np.ndarray
    phases: list
    sources: list
    nu_left: np.ndarray
    references: np.ndarray
    prediction_errors: list
    joint_events: list
    rmse_position: float
    mode_occupancy: np.ndarray
    dropout_rate: float
    late_discard_rate: float
    slot_miss_rate: float
    sequences_sent: int
    tau_bars: np.ndarray
    rtts: np.ndarray

    @property
    def trace(self):
        """Rows ``(step, x1, x2, u, phase, fresh, Nu_left)``."""
        return [
            (t, *self.states[t, :2], self.inputs[t, 0], self.phases[t], self.sources[t], int(self.nu_left[t]))
            for t in range(self.states.shape[0])
        ]


def trace_csv(result: EpisodeResult) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for t, x1, x2, u, phase, src, nu in result.trace:
        lines.append(f"{t},{x1!r},{x2!r},{u!r},{phase},{src},{nu}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# loop components

_NULL_SEQ_ID = 0


class _Frames:
    def __init__(self, plant: PlantModel):
        self.plant = plant
        self._cache = {}

    def __call__(self, reference: float):
        if reference not in self._cache:
            self._cache[reference] = steady_state(self.plant, reference)
        return self._cache[reference]


class _Controller:
    def __init__(self, cfg: NpcConfig, mpc: CondensedMpc, frames: _Frames, null_seq: InputSequence):
        self.cfg, self.mpc, self.frames = cfg, mpc, frames
        self.phase = NOMINAL
        self.last_used = -1
        self.last_slot = -1
        self.next_id = _NULL_SEQ_ID + 1
        self.library = {null_seq.id: null_seq}
        self.planned = {}  # slot -> id, nominal sequences of the current nominal epoch

    def _input_for(self, token, x):
        sid, idx = token
        seq = self.library[sid]
        if idx < 0:
            return np.clip(seq.u_ss - self.mpc.k_lqr @ (x - seq.x_ss), -self.cfg.plant.u_bar, self.cfg.plant.u_bar)
        return seq.inputs[idx]

    def _advance(self, token):
        sid, idx = token
        if idx < 0 or idx + 1 >= self.library[sid].horizon:
            return (sid, -1)
        return (sid, idx + 1)

    def _rollout(self, k_prime, meas: Measurement, slot: int, use_plan: bool):
        a, b = self.cfg.plant.a, self.cfg.plant.b
        x = np.asarray(meas.x, dtype=float)
        token = meas.token
        tokens = []
        for s in range(k_prime, slot):
            if s > k_prime:
                token = (self.planned[s], 0) if use_plan and s in self.planned else self._advance(token)
            tokens.append(token)
            x = a @ x + b @ self._input_for(token, x)
        return tuple(tokens), x

    def receive(self, k_prime: int, meas: Measurement):
        """Handle one measurement; returns a PlannedSequence or None."""
        if k_prime <= self.last_used:
            return None
        self.last_used = k_prime
        if meas.plant_phase == CORRECTION and self.phase == NOMINAL:
            self.phase = CORRECTION
            self.planned = {}
        elif meas.plant_phase in (ACK, NOMINAL) and self.phase == CORRECTION:
            self.phase = NOMINAL
            self.planned = {}
        slot = k_prime + self.cfg.tau_bar(k_prime)
        if slot <= self.last_slot:
            return None
        self.last_slot = slot
        nominal = self.phase == NOMINAL
        tokens, x_hat = self._rollout(k_prime, meas, slot, use_plan=nominal)
        x_ss, u_ss = self.frames(self.cfg.reference(slot))
        try:
            inputs, _ = self.mpc.solve(x_hat, x_ss, u_ss)
        except (InfeasibleError, NumericalError):
            inputs = self._lqr_sequence(x_hat, x_ss, u_ss)
        seq = InputSequence(self.next_id, slot, inputs, x_ss, u_ss)
        self.next_id += 1
        self.library[seq.id] = seq
        if nominal:
            self.planned[slot] = seq.id
        return PlannedSequence(seq, NOMINAL if nominal else CORRECTION, k_prime, tokens, x_hat)

    def _lqr_sequence(self, x, x_ss, u_ss):
        plant = self.cfg.plant
        out = []
        for _ in range(self.cfg.mpc.horizon):
            u = np.clip(u_ss - self.mpc.k_lqr @ (x - x_ss), -plant.u_bar, plant.u_bar)
            out.append(u)
            x = plant.a @ x + plant.b @ u
        return np.array(out)


class _Plant:
    def __init__(self, cfg: NpcConfig, k_lqr, null_seq: InputSequence, x0):
        self.cfg, self.k_lqr = cfg, k_lqr
        self.x = np.array(x0, dtype=float)
        self.phase = NOMINAL
        self.current = null_seq
        self.idx = -1
        self.ack_id = -1
        self.buffer = {}
        self.tokens = {}
        self.late = 0
        self.on_time_slots = set()

    def deliver(self, t, planned: PlannedSequence):
        if planned.seq.k_star < t:
            self.late += 1
            return
        self.buffer[planned.seq.k_star] = planned
        self.on_time_slots.add(planned.seq.k_star)

    def _consistent(self, planned: PlannedSequence) -> bool:
        return all(self.tokens.get(planned.origin + j) == tok for j, tok in enumerate(planned.assumed))

    def _fallback(self):
        seq = self.current
        u = np.clip(seq.u_ss - self.k_lqr @ (self.x - seq.x_ss), -self.cfg.plant.u_bar, self.cfg.plant.u_bar)
        self.idx = -1
        return u, FALLBACK

    def _reuse(self):
        if self.idx < 0 or self.idx + 1 >= self.current.horizon:
            return self._fallback()
        self.idx += 1
        return self.current.inputs[self.idx], REUSE

    def _fresh(self, planned):
        self.current = planned.seq
        self.idx = 0
        return planned.seq.inputs[0], FRESH

    def select(self, t):
        """Logic unit: returns (u, source, accepted PlannedSequence or None)."""
        cand = self.buffer.pop(t, None)
        for k in [k for k in self.buffer if k < t]:
            del self.buffer[k]
        accepted = None
        if cand is not None:
            ok = self._consistent(cand)
            if self.phase == NOMINAL and cand.kind == NOMINAL:
                if ok:
                    accepted = cand
                else:
                    self.phase = CORRECTION
            elif self.phase == CORRECTION and cand.kind == CORRECTION and ok:
                accepted = cand
                self.phase = ACK
                self.ack_id = cand.seq.id
            elif self.phase == ACK and cand.kind == NOMINAL and cand.seq.id > self.ack_id:
                if ok:
                    accepted = cand
                    self.phase = NOMINAL
                else:
                    self.phase = CORRECTION
        u, src = self._fresh(accepted) if accepted is not None else self._reuse()
        self.tokens[t] = (self.current.id, self.idx)
        return np.asarray(u, dtype=float), src, accepted

    def nu_left(self):
        return 0 if self.idx < 0 else self.current.horizon - self.idx - 1


# --------------------------------------------------------------------------
# episodes


def run_episode(cfg: NpcConfig, run_index: int = 0, channel: Callable | None = None, mpc: CondensedMpc | None = None) -> EpisodeResult:
    """Simulate one episode; deterministic in ``(cfg, run_index)``."""
    rtt_rng, split_rng, noise_rng = run_streams(cfg.seed, run_index)
    if channel is None:
        channel = LogNormalChannel(cfg, rtt_rng, split_rng)
    if mpc is None:
        mpc = CondensedMpc(cfg.plant, cfg.mpc)
    plant_model = cfg.plant
    n, m, T = plant_model.n, plant_model.m, cfg.duration
    frames = _Frames(plant_model)
    zero_x, zero_u = frames(0.0)
    null_seq = InputSequence(_NULL_SEQ_ID, 0, np.zeros((0, m)), zero_x, zero_u)
    ctrl = _Controller(cfg, mpc, frames, null_seq)
    plant = _Plant(cfg, mpc.k_lqr, null_seq, np.zeros(n) if cfg.x0 is None else cfg.x0)
    modes = ModeState()

    states = np.zeros((T, n))
    inputs = np.zeros((T, m))
    nu_left = np.zeros(T, dtype=int)
    refs = np.zeros(T)
    taus = np.zeros(T, dtype=int)
    rtts = np.zeros(T, dtype=int)
    phases, sources, pred_err = [], [], []
    events = [(0, modes.joint)]
    uplink = []  # heap of (arrival, timestamp, Measurement, ca)
    downlink = []  # heap of (deliver_at, id, PlannedSequence)
    exceed = 0
    sent = 0

    def note(t):
        label = joint_label(plant.phase, ctrl.phase)
        modes.plant_phase, modes.controller_phase = plant.phase, ctrl.phase
        if label != events[-1][1]:
            events.append((t, label))

    def handle(t, k_prime, meas, ca):
        nonlocal sent
        planned = ctrl.receive(k_prime, meas)
        note(t)
        if planned is not None:
            sent += 1
            heapq.heappush(downlink, (t + ca, planned.seq.id, planned))

    w_idx = plant_model.disturbance_index
    for t in range(T):
        while uplink and uplink[0][0] <= t:
            _, k_prime, meas, ca = heapq.heappop(uplink)
            handle(t, k_prime, meas, ca)
        while downlink and downlink[0][0] <= t:
            _, _, planned = heapq.heappop(downlink)
            plant.deliver(t, planned)
        u, src, accepted = plant.select(t)
        note(t)
        x = plant.x
        states[t] = x
        inputs[t] = u
        nu_left[t] = plant.nu_left()
        phases.append(plant.phase)
        sources.append(src)
        refs[t] = cfg.reference(t)
        taus[t] = cfg.tau_bar(t)
        pred_err.append(float(np.linalg.norm(accepted.predicted - x)) if accepted is not None else math.nan)

        rtt, sc, ca = channel(t)
        rtts[t] = rtt
        exceed += rtt > taus[t]
        meas = Measurement(x.copy(), plant.tokens[t], plant.phase == ACK, plant.phase)
        if sc == 0:
            handle(t, t, meas, ca)
        else:
            heapq.heappush(uplink, (t + sc, t, meas, ca))

        w = np.zeros(n)
        w[w_idx] = noise_rng.uniform(-plant_model.w_bar, plant_model.w_bar) if plant_model.w_bar > 0 else 0.0
        plant.x = plant_model.a @ x + plant_model.b @ u + w

    if np.any(np.abs(inputs) > plant_model.u_bar + 1e-9):
        raise NumericalError("applied input outside the admissible box")
    window = slice(cfg.warmup, T)
    err = states[window, plant_model.position_index] - refs[window]
    rmse = float(np.sqrt(np.mean(err**2)))
    occ = np.array([sum(p == ph for p in phases[window]) for ph in (NOMINAL, CORRECTION, ACK)], dtype=float)
    occ /= occ.sum()
    first_slot = int(taus[0])
    slots = range(first_slot, T)
    missed = sum(1 for k in slots if k not in plant.on_time_slots)
    return EpisodeResult(
        states, inputs, phases, sources, nu_left, refs, pred_err, events, rmse, occ,
        exceed / T, plant.late / sent if sent else 0.0, missed / len(slots) if len(slots) else 0.0,
        sent, taus, rtts,
    )


# --------------------------------------------------------------------------
# batches


@dataclass
class BatchStats:
    """Across-run aggregate of one configuration; CI is the normal 95% interval of the mean."""

    n_runs: int
    rmses: np.ndarray
    mean_rmse: float
    ci_low: float
    ci_high: float
    rho_hat: np.ndarray
    dropout_rate: float
    position_mean: np.ndarray
    position_half_width: np.ndarray

    @property
    def ci_half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


def _ci(values, axis=0):
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=axis)
    n = values.shape[axis]
    half = 1.96 * values.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, half


def _episode_job(args):
    cfg, i = args
    res = run_episode(cfg, i)
    return res.rmse_position, res.mode_occupancy, res.dropout_rate, res.states[:, cfg.plant.position_index]


def run_batch(cfg: NpcConfig, n_runs: int, workers: int = 1) -> BatchStats:
    """``n_runs`` episodes; run ``i`` draws from the streams of ``(cfg.seed, i)``."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    jobs = [(cfg, i) for i in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_episode_job, jobs, chunksize=max(1, n_runs // (4 * workers))))
    else:
        mpc = CondensedMpc(cfg.plant, cfg.mpc)
        out = []
        for _, i in jobs:
            res = run_episode(cfg, i, mpc=mpc)
            out.append((res.rmse_position, res.mode_occupancy, res.dropout_rate, res.states[:, cfg.plant.position_index]))
    rmses = np.array([o[0] for o in out])
    mean, half = _ci(rmses)
    pos_mean, pos_half = _ci(np.array([o[3] for o in out]))
    return BatchStats(
        n_runs, rmses, float(mean), float(mean - half), float(mean + half),
        np.mean([o[1] for o in out], axis=0), float(np.mean([o[2] for o in out])), pos_mean, pos_half,
    )
