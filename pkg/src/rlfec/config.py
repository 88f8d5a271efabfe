"""Scenario files: strict INI (`key = value` under sections), every default dumpable."""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import AgentConfig
from .channel import (MARKOV_PE_VALUES, UNIFORM_PE_VALUES, FixedLoss, LinkConfig, LossModel,
                      MarkovLoss, UniformLoss)
from .fec import FecConfig

RTT_PRESETS = {
    # one-way delay ms, max concurrent LTP sessions
    "earth-moon": (1000, 5),
    "earth-mars": (120_000, 30),
}
POLICIES = ("fixed", "feedback", "rl")
LOSS_MODELS = ("discrete-uniform", "markov", "fixed")
AUTO = "auto"


@dataclass
class ScenarioSection:
    name: str = "earth-moon-markov-5rtt"
    rtt_preset: str = "earth-moon"
    policy: str = "feedback"
    seed: int = 42
    rounds: int = 100
    file_size: int = 50_000_000
    train_seed: int = 7
    train_rounds: int = 100
    stop_on_convergence: bool = False


@dataclass
class LossSection:
    model: str = "markov"
    interval_rtt: float = 5.0
    pe_values: typing.Optional[tuple] = None  # auto: the model's stock set
    fixed_pe: float = 0.20


@dataclass
class LinkSection:
    down_rate: int = 10_000_000
    up_rate: int = 100_000
    one_way_delay: typing.Optional[int] = None  # auto: from rtt_preset
    symbol_size: int = 1026


@dataclass
class LtpSection:
    block_size: int = 600_000
    segment_size: int = 1024
    max_sessions: typing.Optional[int] = None  # auto: from rtt_preset
    max_rounds: int = 50
    cp_timer_ms: typing.Optional[int] = None  # auto: 1.5 RTT + 2 x worst matrix latency


@dataclass
class PolicySection:
    fixed_rc: float = 0.77
    mu: float = 1.15
    pe_init: float = 0.0


SECTIONS = {
    "scenario": ScenarioSection,
    "loss": LossSection,
    "link": LinkSection,
    "ltp": LtpSection,
    "fec": FecConfig,
    "policy": PolicySection,
    "agent": AgentConfig,
}


@dataclass
class ScenarioConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    loss: LossSection = field(default_factory=LossSection)
    link: LinkSection = field(default_factory=LinkSection)
    ltp: LtpSection = field(default_factory=LtpSection)
    fec: FecConfig = field(default_factory=FecConfig)
    policy: PolicySection = field(default_factory=PolicySection)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        s = self.scenario
        if s.rtt_preset not in RTT_PRESETS:
            raise ValueError(f"unknown rtt_preset {s.rtt_preset!r}; choose from {sorted(RTT_PRESETS)}")
        if s.policy not in POLICIES:
            raise ValueError(f"unknown policy {s.policy!r}; choose from {POLICIES}")
        if self.loss.model not in LOSS_MODELS:
            raise ValueError(f"unknown loss model {self.loss.model!r}; choose from {LOSS_MODELS}")
        if s.file_size <= 0 or s.rounds < 0:
            raise ValueError("file_size must be > 0 and rounds >= 0")
        if self.loss.interval_rtt <= 0:
            raise ValueError("interval_rtt must be > 0")
        for pe in self.pe_values:
            if not 0.0 <= pe <= 1.0:
                raise ValueError(f"p_e value {pe} outside [0, 1]")
        self.link_config()

    # derived values ----------------------------------------------------

    @property
    def one_way_delay(self) -> int:
        d = self.link.one_way_delay
        return RTT_PRESETS[self.scenario.rtt_preset][0] if d is None else d

    @property
    def rtt(self) -> int:
        return 2 * self.one_way_delay

    @property
    def max_sessions(self) -> int:
        m = self.ltp.max_sessions
        return RTT_PRESETS[self.scenario.rtt_preset][1] if m is None else m

    @property
    def pe_values(self) -> tuple:
        if self.loss.pe_values is not None:
            return tuple(self.loss.pe_values)
        return UNIFORM_PE_VALUES if self.loss.model == "discrete-uniform" else MARKOV_PE_VALUES

    @property
    def loss_interval_ms(self) -> float:
        return self.loss.interval_rtt * self.rtt

    @property
    def cp_timer_ms(self) -> int:
        if self.ltp.cp_timer_ms is not None:
            return self.ltp.cp_timer_ms
        # worst time a checkpoint waits for its matrix: aggregation plus a full N_max on the wire
        matrix_ms = self.fec.n_max * self.link.symbol_size * 8 * 1000 / self.link.down_rate
        return int(math.ceil(1.5 * self.rtt + 2 * (self.fec.aggregation_ms + matrix_ms)))

    def link_config(self) -> LinkConfig:
        return LinkConfig(self.link.down_rate, self.link.up_rate, self.one_way_delay, self.link.symbol_size)

    def make_loss_model(self, rng: np.random.Generator) -> LossModel:
        kind = self.loss.model
        if kind == "fixed":
            return FixedLoss(self.loss.fixed_pe)
        if kind == "discrete-uniform":
            return UniformLoss(rng, int(round(self.loss_interval_ms)), self.pe_values)
        return MarkovLoss(rng, self.loss_interval_ms, self.pe_values)

    def replace(self, **overrides) -> "ScenarioConfig":
        """Copy with dotted overrides, e.g. replace(**{"scenario.policy": "rl"})."""
        cfg = ScenarioConfig(**{name: dataclasses.replace(getattr(self, name)) for name in SECTIONS})
        for key, value in overrides.items():
            section, _, attr = key.partition(".")
            obj = getattr(cfg, section)
            if attr not in {f.name for f in dataclasses.fields(obj)}:
                raise KeyError(key)
            setattr(obj, attr, value)
        cfg.validate()
        return cfg


def _convert(raw: str, tp):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in (AUTO, "none", ""):
            return None
        return _convert(raw, args[0])
    if tp is tuple:
        return tuple(float(x) for x in raw.replace(",", " ").split())
    if tp is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if tp is int:
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if tp is float:
        return float(raw)
    return raw


def _format(value) -> str:
    if value is None:
        return AUTO
    if isinstance(value, tuple):
        return ", ".join(f"{v:g}" for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    kwargs = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        cls = SECTIONS[section]
        hints = typing.get_type_hints(cls)
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in cp.items(section):
            if key not in known:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            try:
                values[key] = _convert(raw, hints[key])
            except ValueError as exc:
                raise ValueError(f"bad value for {section}.{key}: {raw!r} ({exc})") from None
        kwargs[section] = cls(**values)
    return ScenarioConfig(**kwargs)


def load_config(path) -> ScenarioConfig:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: ScenarioConfig | None = None) -> str:
    cfg = cfg or ScenarioConfig()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for name in SECTIONS:
        obj = getattr(cfg, name)
        cp[name] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
