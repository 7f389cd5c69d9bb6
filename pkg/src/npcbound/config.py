"""Experiment configuration files.

INI syntax (``configparser``) with JSON values for vectors and matrices::

    [plant]
    mass = 1.0
    spring = 10.0
    damping = 0.5
    t_d = 0.05
    w_bar = 0.1
    u_bar = 25.0

    [mpc]
    q = [[500, 0], [0, 1]]
    r = [[0.1]]
    horizon = 20

A plant may instead give discrete ``a`` and ``b`` matrices directly. Sections
named ``variant:NAME`` hold dotted overrides (``mpc.r = [[1.0]]``) applied when
that variant is selected.
"""
from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .delay_model import DelayDistribution, DiscretizationRule, from_lognormal
from .error_calculus import ErrorParams
from .errors import ConfigError
from .mpc_core import MpcConfig, PlantModel, msd_plant
from .netsim import DelaySpec, NpcConfig

__all__ = ["ExperimentConfig", "load_config", "parse_config"]


def _json(raw, key):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{key}: not valid JSON ({exc.msg})") from None


class _Section:
    def __init__(self, parser, name):
        if not parser.has_section(name):
            raise ConfigError(f"missing section [{name}]")
        self.name, self.sec = name, parser[name]

    def has(self, key):
        return key in self.sec

    def float(self, key, default=None):
        if key not in self.sec:
            if default is None:
                raise ConfigError(f"[{self.name}] missing key {key!r}")
            return default
        try:
            return float(self.sec[key])
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: expected a number") from None

    def int(self, key, default=None):
        v = self.float(key, None if default is None else float(default))
        if v != int(v):
            raise ConfigError(f"[{self.name}] {key}: expected an integer")
        return int(v)

    def str(self, key, default=None):
        if key not in self.sec:
            if default is None:
                raise ConfigError(f"[{self.name}] missing key {key!r}")
            return default
        return self.sec[key].strip()

    def json(self, key, default=None):
        if key not in self.sec:
            if default is None:
                raise ConfigError(f"[{self.name}] missing key {key!r}")
            return default
        return _json(self.sec[key], f"[{self.name}] {key}")


@dataclass
class ExperimentConfig:
    """Everything one config file specifies, after variant overrides."""

    plant: PlantModel
    mpc: MpcConfig
    lipschitz: float
    threshold: float
    mu: float
    sigma: float
    rule: DiscretizationRule
    tau_range: tuple | None
    seed: int
    duration: int
    runs: int
    reference_schedule: list
    sweep_taus: list
    beta_split: tuple
    warmup: int
    switch_step: int | None = None
    switch_mu: float | None = None
    switch_sigma: float | None = None
    switch_taus: tuple | None = None
    target_mean: float | None = None
    config_id: str = "config"
    snapshot: dict = field(default_factory=dict)

    def distribution(self) -> DelayDistribution:
        return from_lognormal(self.mu, self.sigma, self.rule)

    def switch_distribution(self) -> DelayDistribution:
        self._require_switch()
        return from_lognormal(self.switch_mu, self.switch_sigma, self.rule)

    def error_params(self) -> ErrorParams:
        return ErrorParams.from_matrices(
            self.plant.a, self.plant.b, self.lipschitz, self.plant.w_bar, self.plant.u_bar,
            self.mpc.horizon, threshold=self.threshold,
        )

    def npc_config(self, tau_schedule, delay_spec=None, seed=None) -> NpcConfig:
        if isinstance(tau_schedule, (int, np.integer)):
            tau_schedule = [(0, int(tau_schedule))]
        if delay_spec is None:
            delay_spec = [DelaySpec(0, self.mu, self.sigma, self.rule)]
        return NpcConfig(
            plant=self.plant,
            mpc=self.mpc,
            tau_bar_schedule=list(tau_schedule),
            delay_spec=list(delay_spec),
            beta_split=self.beta_split,
            seed=self.seed if seed is None else seed,
            duration=self.duration,
            reference_schedule=list(self.reference_schedule),
            warmup=self.warmup,
        )

    def switch_delay_spec(self) -> list:
        self._require_switch()
        return [
            DelaySpec(0, self.mu, self.sigma, self.rule),
            DelaySpec(self.switch_step, self.switch_mu, self.switch_sigma, self.rule),
        ]

    def _require_switch(self):
        if self.switch_step is None:
            raise ConfigError("config has no [switch] section")


def _apply_variant(parser: configparser.ConfigParser, variant: str):
    name = f"variant:{variant}"
    if not parser.has_section(name):
        known = [s.split(":", 1)[1] for s in parser.sections() if s.startswith("variant:")]
        raise ConfigError(f"unknown variant {variant!r}; available: {known}")
    for dotted, value in parser[name].items():
        if "." not in dotted:
            raise ConfigError(f"[{name}] {dotted}: override keys look like section.key")
        sec, key = dotted.split(".", 1)
        if not parser.has_section(sec):
            raise ConfigError(f"[{name}] {dotted}: no section [{sec}]")
        parser[sec][key] = value


def parse_config(text: str, variant: str | None = None, config_id: str = "config") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if variant:
        _apply_variant(parser, variant)
        config_id = f"{config_id}:{variant}"
    snapshot = {s: dict(parser[s]) for s in parser.sections() if not s.startswith("variant:")}

    pl = _Section(parser, "plant")
    if pl.has("a") or pl.has("b"):
        a, b = np.array(pl.json("a"), dtype=float), np.array(pl.json("b"), dtype=float)
    else:
        a, b = msd_plant(pl.float("mass"), pl.float("spring"), pl.float("damping"), pl.float("t_d"))
    x_box = pl.json("x_box", None) if pl.has("x_box") else None
    plant = PlantModel(
        a, b, w_bar=pl.float("w_bar"), u_bar=pl.float("u_bar"), x_box=x_box,
        t_d=pl.float("t_d", 0.05),
        disturbance_index=pl.int("disturbance_index", 1), position_index=pl.int("position_index", 0),
    )

    mp = _Section(parser, "mpc")
    mpc = MpcConfig(
        q=np.array(mp.json("q"), dtype=float),
        r=np.array(mp.json("r"), dtype=float),
        horizon=mp.int("horizon", 20),
        p_term=np.array(mp.json("p"), dtype=float) if mp.has("p") else None,
        terminal_box=mp.json("terminal_box") if mp.has("terminal_box") else None,
    )

    ca = _Section(parser, "calculus")
    de = _Section(parser, "delay")
    try:
        rule = DiscretizationRule(
            de.str("mode", "ceil"), de.int("offset", 0), de.float("tail_mass_cutoff", 1e-4)
        )
    except ValueError as exc:
        raise ConfigError(f"[delay] {exc}") from None
    tau_range = None
    if de.has("tau_min") or de.has("tau_max"):
        tau_range = (de.int("tau_min"), de.int("tau_max"))

    ex = _Section(parser, "experiment")
    reference = [tuple(r) for r in ex.json("reference", [[0, 1.0]])]
    cfg = ExperimentConfig(
        plant=plant,
        mpc=mpc,
        lipschitz=ca.float("lipschitz"),
        threshold=ca.float("threshold", 1e-3),
        mu=de.float("mu"),
        sigma=de.float("sigma"),
        rule=rule,
        tau_range=tau_range,
        seed=ex.int("seed", 0),
        duration=ex.int("duration", 120),
        runs=ex.int("runs", 100),
        reference_schedule=reference,
        sweep_taus=[int(t) for t in ex.json("sweep_taus", [2, 3, 4, 5, 6, 7, 8])],
        beta_split=tuple(float(v) for v in ex.json("beta_split", [2.0, 2.0])),
        warmup=ex.int("warmup", 0),
        target_mean=de.float("target_mean") if de.has("target_mean") else None,
        config_id=config_id,
        snapshot=snapshot,
    )
    if not cfg.sigma > 0:
        raise ConfigError("[delay] sigma must be positive")
    if cfg.lipschitz < 0:
        raise ConfigError("[calculus] lipschitz must be nonnegative")
    if parser.has_section("switch"):
        sw = _Section(parser, "switch")
        cfg.switch_step = sw.int("at_step")
        cfg.switch_mu = sw.float("mu")
        cfg.switch_sigma = sw.float("sigma")
        cfg.switch_taus = (sw.int("tau_before"), sw.int("tau_after"))
    return cfg


def load_config(path, variant: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, variant, config_id=path.stem)
