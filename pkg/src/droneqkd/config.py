"""Run configuration: YAML files, the shipped presets and field-path validation.

A config file is a nested mapping. ``extends: <preset>`` starts from a shipped
preset and overrides it key by key. Physics parameters of the source
(``protocol.mu_*``, ``protocol.p_*``, ``protocol.gate_rate``) and
``run.duration_s`` must be present after merging; everything else has a
default.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from . import rng as rngmod
from .core import LinkBudget, ParamError, ProtocolParams, validate_params
from .detector import DetectorConfig, ReceiverClock
from .tracking import Sinusoid, TrackingConfig

PRESETS = ("paper-defaults",)
REQUIRED = (
    "protocol.mu_signal", "protocol.mu_decoy", "protocol.mu_vacuum",
    "protocol.p_signal", "protocol.p_decoy", "protocol.p_vacuum",
    "protocol.gate_rate", "run.duration_s",
)


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field path when known."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class ChannelScalars:
    extinction_ratio: float = 30.0
    background_rate: float = 2000.0
    timing_jitter_sigma: float = 40e-12
    source_jitter_sigma: float = 10e-12


@dataclass(frozen=True)
class SyncConfig:
    loss_probability: float = 0.0
    jitter_sigma: float = 40e-12
    divider: int = 1  # one SYNC pulse every `divider` gates

    def __post_init__(self):
        if not 0 <= self.loss_probability < 1:
            raise ParamError("loss_probability", "must lie in [0, 1)")
        if self.divider < 1:
            raise ParamError("divider", "must be >= 1")
        if self.jitter_sigma < 0:
            raise ParamError("jitter_sigma", "must be >= 0")


@dataclass(frozen=True)
class PostprocessingConfig:
    block_size: int = 4096
    column_weight: int = 3
    ldpc_budget_factor: Optional[float] = None  # None: use protocol.ec_efficiency_f
    qber_floor: float = 0.005

    def __post_init__(self):
        if self.block_size < 64:
            raise ParamError("block_size", "must be >= 64")
        if self.column_weight < 2:
            raise ParamError("column_weight", "must be >= 2")
        if self.ldpc_budget_factor is not None and not self.ldpc_budget_factor >= 1:
            raise ParamError("ldpc_budget_factor", "must be >= 1")


@dataclass(frozen=True)
class Seeds:
    transmitter: int = 1
    channel: int = 2
    receiver: int = 3
    sampling: int = 4

    @classmethod
    def from_master(cls, master: int) -> "Seeds":
        gen = rngmod.stream(master, "seeds")
        return cls(*(int(v) for v in gen.integers(0, 2 ** 63, 4)))


@dataclass(frozen=True)
class Transport:
    mode: str = "in_process"  # or "socket"
    address: Optional[str] = None

    def __post_init__(self):
        if self.mode not in ("in_process", "socket"):
            raise ParamError("mode", "must be 'in_process' or 'socket'")


@dataclass(frozen=True)
class RunConfig:
    params: ProtocolParams = field(default_factory=ProtocolParams)
    budget: LinkBudget = field(default_factory=LinkBudget)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    clock: ReceiverClock = field(default_factory=ReceiverClock)
    drone: TrackingConfig = field(default_factory=TrackingConfig)
    ground: TrackingConfig = field(default_factory=TrackingConfig)
    channel: ChannelScalars = field(default_factory=ChannelScalars)
    sync: SyncConfig = field(default_factory=SyncConfig)
    postprocessing: PostprocessingConfig = field(default_factory=PostprocessingConfig)
    seeds: Seeds = field(default_factory=Seeds)
    transport: Transport = field(default_factory=Transport)
    duration_s: float = 10.0
    window_s: float = 10.0
    out_dir: Optional[str] = None

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ConfigError("run.duration_s", "must be > 0")
        if not self.window_s > 0:
            raise ConfigError("run.window_s", "must be > 0")
        try:
            validate_params(self.params)
        except ParamError as exc:
            raise ConfigError(f"protocol.{exc.field}", str(exc)) from None
        n = self.window_s * self.params.gate_rate
        if abs(n - round(n)) > 1e-6:
            raise ConfigError("run.window_s", "window must hold a whole number of gates")

    @property
    def gates_per_window(self) -> int:
        return int(round(self.window_s * self.params.gate_rate))

    @property
    def n_windows(self) -> int:
        return int(self.duration_s // self.window_s + 1e-9)

    @property
    def ldpc_budget_factor(self) -> float:
        f = self.postprocessing.ldpc_budget_factor
        return self.params.ec_efficiency_f if f is None else f

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# section name -> (RunConfig attribute, dataclass)
_SECTIONS = {
    "protocol": ("params", ProtocolParams),
    "link": ("budget", LinkBudget),
    "detector": ("detector", DetectorConfig),
    "receiver_clock": ("clock", ReceiverClock),
    "channel": ("channel", ChannelScalars),
    "sync": ("sync", SyncConfig),
    "postprocessing": ("postprocessing", PostprocessingConfig),
    "seeds": ("seeds", Seeds),
    "transport": ("transport", Transport),
}
_RUN_KEYS = {"duration_s", "window_s", "out_dir"}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (``1e-9``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)[eE][-+]?\d+$"),
    list("-+0123456789."),
)


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError("extends", f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return Path(str(resources.files("droneqkd") / "presets" / f"{name}.yaml"))


def _read_yaml(path: Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from None
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError("", f"{where}: {exc.problem}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("", f"{path}: top level must be a mapping")
    return data


def _merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _resolve(data: dict, depth: int = 0) -> dict:
    parent = data.pop("extends", None)
    if parent is None:
        return data
    if depth > 4:
        raise ConfigError("extends", "preset chain too deep")
    return _merge(_resolve(_read_yaml(preset_path(parent)), depth + 1), data)


def _build(cls, values: Any, path: str, convert=None):
    if values is None:
        values = {}
    if not isinstance(values, Mapping):
        raise ConfigError(path, "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown field")
    kwargs = dict(values)
    if convert:
        kwargs = convert(kwargs, path)
    try:
        return cls(**kwargs)
    except ParamError as exc:
        raise ConfigError(f"{path}.{exc.field}", str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _tracking(values: dict, path: str) -> dict:
    sins = values.get("sinusoids")
    if sins:
        values["sinusoids"] = tuple(
            _build(Sinusoid, s, f"{path}.sinusoids[{i}]") for i, s in enumerate(sins))
    return values


def _lookup(data: Mapping, dotted: str) -> bool:
    node = data
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return False
        node = node[part]
    return True


def config_from_dict(data: Mapping) -> RunConfig:
    data = _resolve(dict(data))
    for req in REQUIRED:
        if not _lookup(data, req):
            raise ConfigError(req, "missing required field")
    allowed = set(_SECTIONS) | {"tracking", "run"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown section")
    kwargs = {}
    for section, (attr, cls) in _SECTIONS.items():
        if section in data:
            kwargs[attr] = _build(cls, data[section], section)
    tracking = data.get("tracking") or {}
    bad = sorted(set(tracking) - {"drone", "ground"})
    if bad:
        raise ConfigError(f"tracking.{bad[0]}", "unknown station")
    for station in ("drone", "ground"):
        if station in tracking:
            kwargs[station] = _build(TrackingConfig, tracking[station], f"tracking.{station}",
                                     _tracking)
    run = data.get("run") or {}
    bad = sorted(set(run) - _RUN_KEYS)
    if bad:
        raise ConfigError(f"run.{bad[0]}", "unknown field")
    for key in _RUN_KEYS & set(run):
        kwargs[key] = run[key]
    if not isinstance(kwargs.get("duration_s"), (int, float)):
        raise ConfigError("run.duration_s", "must be a number")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    return config_from_dict(_read_yaml(Path(path)))


def load_preset(name: str = "paper-defaults") -> RunConfig:
    return load_config(preset_path(name))
