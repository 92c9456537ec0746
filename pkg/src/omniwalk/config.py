"""Run configuration: nested tables mirroring the module config blocks.

Files are TOML or JSON. Unknown keys are rejected with the key and line; a
config file must set ``run.epochs``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .curriculum import SchedulerConfig
from .env.description import _key_lines
from .mathkit import ConfigurationError
from .reward import RewardWeights
from .rlcore import PpoConfig
from .sim2real import FrictionConfig, LatencyConfig, NoiseConfig, TransferConfig

REQUIRED = (("run", "epochs"),)


@dataclass
class RunSection:
    env: str = "pointmass"
    seed: int = 0
    epochs: int = 300
    checkpoint_every: int = 10
    out_dir: str = "runs/default"
    max_episode_steps: int = 400
    init_noise: float = 0.03
    description: str = ""  # robot description file; empty = built-in for `env`


@dataclass
class SchedulerSection:
    v_core: list = field(default_factory=lambda: [0.4, 0.0, 0.0])
    # empty = environment default (full +-0.6 box; sagittal-only for the biped)
    final_lo: list = field(default_factory=list)
    final_hi: list = field(default_factory=list)
    zeta: int = 3000
    transition_duration: float = 1.0
    enabled: bool = True


@dataclass
class TransferSection:
    filter_cutoff_hz: float = 10.0
    pd_noise: bool = True
    sensor_noise: bool = True
    randomize_friction: bool = True
    randomize_latency: bool = True
    action_filter: bool = False


@dataclass
class LatencySection:
    range: list = field(default_factory=lambda: [0.0, 0.050])
    eval_latency: float = 0.008


@dataclass
class FrictionSection:
    tangential: list = field(default_factory=lambda: [0.4, 0.8])
    torsional: list = field(default_factory=lambda: [0.1, 0.3])


SECTIONS = {
    "run": RunSection,
    "ppo": PpoConfig,
    "reward": RewardWeights,
    "scheduler": SchedulerSection,
    "noise": NoiseConfig,
    "friction": FrictionSection,
    "latency": LatencySection,
    "transfer": TransferSection,
}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    scheduler: SchedulerSection = field(default_factory=SchedulerSection)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    friction: FrictionSection = field(default_factory=FrictionSection)
    latency: LatencySection = field(default_factory=LatencySection)
    transfer: TransferSection = field(default_factory=TransferSection)

    # -- conversion ------------------------------------------------------------
    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: _plain(v) for k, v in d.items()}
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def copy(self) -> "RunConfig":
        return copy.deepcopy(self)

    # -- derived module configs -------------------------------------------------
    def scheduler_config(self, env_default: SchedulerConfig | None = None) -> SchedulerConfig:
        s = self.scheduler
        base = env_default or SchedulerConfig()
        return SchedulerConfig(
            v_core=s.v_core,
            final_lo=s.final_lo if s.final_lo else base.final_lo,
            final_hi=s.final_hi if s.final_hi else base.final_hi,
            zeta=s.zeta, transition_duration=s.transition_duration, enabled=s.enabled)

    def transfer_config(self, evaluation: bool = False, disabled: bool = False) -> TransferConfig:
        t = self.transfer
        if disabled:
            return TransferConfig.disabled()
        cfg = TransferConfig(
            noise=copy.deepcopy(self.noise),
            friction=FrictionConfig(tuple(self.friction.tangential), tuple(self.friction.torsional)),
            latency=LatencyConfig(tuple(self.latency.range), self.latency.eval_latency),
            filter_cutoff_hz=t.filter_cutoff_hz, pd_noise=t.pd_noise, sensor_noise=t.sensor_noise,
            randomize_friction=t.randomize_friction, randomize_latency=t.randomize_latency,
            action_filter=t.action_filter)
        if evaluation:
            # deployment settings: filter on, fixed latency
            cfg.action_filter = True
            cfg.randomize_latency = True
            cfg.fixed_latency = self.latency.eval_latency
        return cfg


def _plain(v):
    if isinstance(v, np.ndarray):
        return [float(x) for x in v]
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _coerce(value, default, where: str):
    """Match the type of the default value (ints accepted for floats)."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{where} must be a string")
        return value
    if isinstance(default, (list, tuple, np.ndarray)):
        if not isinstance(value, list):
            raise ConfigurationError(f"{where} must be a list")
        return list(value)
    return value


def config_from_dict(data: dict, source: str = "<dict>", lines: dict | None = None,
                     require: bool = False) -> RunConfig:
    lines = lines or {}

    def pos(table, key=None):
        n = lines.get((table, key)) or lines.get((table, None))
        return f"{source}:{n}" if n else source

    for table in data:
        if table not in SECTIONS:
            raise ConfigurationError(f"unknown config table '{table}' ({pos(table)})")
    if require:
        for table, key in REQUIRED:
            if key not in data.get(table, {}):
                raise ConfigurationError(f"missing required field '{table}.{key}' ({pos(table)})")
    cfg = RunConfig()
    for table, cls in SECTIONS.items():
        given = data.get(table, {})
        if not isinstance(given, dict):
            raise ConfigurationError(f"'{table}' must be a table ({pos(table)})")
        defaults = cls()
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in given.items():
            if key not in names:
                raise ConfigurationError(f"unknown config key '{table}.{key}' ({pos(table, key)})")
            kwargs[key] = _coerce(value, getattr(defaults, key), f"'{table}.{key}' ({pos(table, key)})")
        try:
            section = cls(**kwargs)
        except (ConfigurationError, ValueError, TypeError) as exc:
            raise ConfigurationError(f"[{table}] {exc} ({pos(table)})") from None
        setattr(cfg, table, section)
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    text = p.read_text()
    if p.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{p}: {exc}") from None
        if "config" in data and "seed" in data:  # a run manifest
            data = data["config"]
        return config_from_dict(data, str(p), _json_key_lines(text), require=True)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{p}: {exc}") from None
    return config_from_dict(data, str(p), _key_lines(text), require=True)


def _json_key_lines(text: str) -> dict:
    """Approximate positions for JSON: first line mentioning each key."""
    out = {}
    table = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        for name in SECTIONS:
            if s.startswith(f'"{name}"'):
                table = name
                out.setdefault((table, None), n)
        if table and s.startswith('"'):
            key = s.split('"')[1]
            out.setdefault((table, key), n)
    return out


def parse_config_text(text: str, fmt: str = "toml") -> RunConfig:
    data = json.loads(text) if fmt == "json" else tomllib.loads(text)
    return config_from_dict(data)
