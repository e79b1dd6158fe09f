"""Run configuration and its INI / dict round-trip.

A config file is plain INI with one section per subsystem::

    [run]
    seed = 1
    num_clients = 100
    target_accuracy = 0.8

    [aggregator]
    policy = seafl
    buffer_size = 10
    staleness_limit = 10

Values are coerced to the annotated field types; ``inf`` is accepted for
``staleness_limit``. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .aggregator import AggregationPolicy
from .device import SpeedModel
from .errors import ConfigError
from .model import MODEL_KINDS

REDISPATCH_MODES = ("reporters", "resample")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "logistic"
    hidden_dim: int = 0

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise ConfigError("an mlp needs hidden_dim >= 1")


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 5
    learning_rate: float = 0.05
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate >= 0:
            raise ConfigError("need epochs >= 1, batch_size >= 1, learning_rate >= 0")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    num_classes: int = 10
    dim: int = 20
    samples: int = 20000
    class_sep: float = 3.0
    test_fraction: float = 0.1
    concentration: float = 5.0
    images_path: str = ""
    labels_path: str = ""
    test_images_path: str = ""
    test_labels_path: str = ""
    limit: int = 0

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "idx"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "idx" and not (self.images_path and self.labels_path):
            raise ConfigError("idx data needs images_path and labels_path")
        if not self.concentration > 0:
            raise ConfigError("concentration must be positive")


@dataclass(frozen=True)
class RunConfig:
    target_accuracy: float
    seed: int = 0
    num_clients: int = 100
    concurrency: int = 0  # 0 means ceil(0.2 * num_clients)
    max_virtual_time: float = 3600.0
    max_rounds: int = 10_000
    redispatch: str = "reporters"
    notify_latency: float = 0.0
    stop_at_target: bool = False
    drain: bool = False
    aggregator: AggregationPolicy = field(default_factory=AggregationPolicy)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    data: DataConfig = field(default_factory=DataConfig)
    speed: SpeedModel = field(default_factory=SpeedModel)

    def __post_init__(self) -> None:
        if not 0.0 < self.target_accuracy < 1.0:
            raise ConfigError("target_accuracy must lie in (0, 1)")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        m = self.effective_concurrency
        if not 1 <= m <= self.num_clients:
            raise ConfigError(f"concurrency {m} outside [1, num_clients={self.num_clients}]")
        kind = self.aggregator.kind
        if kind in ("seafl", "seafl2", "fedbuff") and self.aggregator.buffer_size > m:
            raise ConfigError(f"buffer_size {self.aggregator.buffer_size} exceeds concurrency {m}")
        if self.redispatch not in REDISPATCH_MODES:
            raise ConfigError(f"redispatch must be one of {REDISPATCH_MODES}")
        if self.max_virtual_time <= 0 or self.max_rounds < 1:
            raise ConfigError("max_virtual_time and max_rounds must be positive")
        if self.notify_latency < 0:
            raise ConfigError("notify_latency must be non-negative")

    @property
    def effective_concurrency(self) -> int:
        return self.concurrency or math.ceil(0.2 * self.num_clients)

    @property
    def policy(self) -> str:
        return self.aggregator.kind


SECTIONS = {
    "aggregator": AggregationPolicy,
    "model": ModelConfig,
    "train": TrainSettings,
    "data": DataConfig,
    "speed": SpeedModel,
}
# the policy tag is spelled ``policy`` in files, ``kind`` on the dataclass
_ALIASES = {("aggregator", "policy"): "kind"}
_TOP = tuple(f.name for f in fields(RunConfig) if f.name not in SECTIONS)


def _coerce(value: Any, hint: Any, name: str) -> Any:
    try:
        if hint is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if hint is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot read {value!r} as {hint.__name__}") from None


def _build(cls, values: dict[str, Any], where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in values.items():
        attr = _ALIASES.get((where, key), key)
        if attr not in names or attr in SECTIONS:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        kwargs[attr] = _coerce(value, hints[attr], f"{where}.{key}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def from_dict(data: dict[str, Any]) -> RunConfig:
    """Build a config from ``{"run": {...}, "aggregator": {...}, ...}``."""
    unknown = set(data) - set(SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    run = dict(data.get("run", {}))
    if "target_accuracy" not in run:
        raise ConfigError("[run] target_accuracy is required")
    for name, cls in SECTIONS.items():
        run[name] = _build(cls, dict(data.get(name, {})), name)
    sub = {k: run.pop(k) for k in SECTIONS}
    top = _build(_TopProxy, run, "run")
    return RunConfig(**dataclasses.asdict(top), **sub)


def to_dict(cfg: RunConfig) -> dict[str, dict[str, Any]]:
    def encode(v):
        return str(v) if isinstance(v, float) and not math.isfinite(v) else v

    out = {"run": {k: encode(getattr(cfg, k)) for k in _TOP}}
    for name in SECTIONS:
        section = getattr(cfg, name)
        inverse = {v: k for (s, k), v in _ALIASES.items() if s == name}
        out[name] = {inverse.get(f.name, f.name): encode(getattr(section, f.name))
                     for f in fields(section)}
    return out


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_dict({s: dict(parser.items(s)) for s in parser.sections()})


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def dumps(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in to_dict(cfg).items():
        parser[section] = {k: str(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def set_param(cfg: RunConfig, key: str, value: Any) -> RunConfig:
    """Return a copy of ``cfg`` with one key changed.

    ``key`` is either ``section.name`` or a bare name that is unique across
    sections (``buffer_size``, ``alpha``, ``zipf_s``...).
    """
    section, name = _resolve(key)
    if section == "run":
        hint = typing.get_type_hints(RunConfig)[name]
        return replace(cfg, **{name: _coerce(value, hint, key)})
    cls = SECTIONS[section]
    attr = _ALIASES.get((section, name), name)
    sub = replace(getattr(cfg, section),
                  **{attr: _coerce(value, typing.get_type_hints(cls)[attr], key)})
    return replace(cfg, **{section: sub})


def _resolve(key: str) -> tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section == "run" and name in _TOP:
            return section, name
        if section in SECTIONS and _ALIASES.get((section, name), name) in {
                f.name for f in fields(SECTIONS[section])}:
            return section, name
        raise ConfigError(f"unknown config key {key!r}")
    hits = [("run", key)] if key in _TOP else []
    for section, cls in SECTIONS.items():
        if key in {f.name for f in fields(cls)} or (section, key) in _ALIASES:
            hits.append((section, key))
    if not hits:
        raise ConfigError(f"unknown config key {key!r}")
    if len(hits) > 1:
        raise ConfigError(f"ambiguous key {key!r}; qualify it as one of "
                          f"{[s + '.' + k for s, k in hits]}")
    return hits[0]


# RunConfig's scalar fields only, used to validate the [run] section on its own
_TopProxy = dataclasses.make_dataclass(
    "_TopProxy",
    [(f.name, typing.get_type_hints(RunConfig)[f.name], field(default=f.default))
     if f.default is not dataclasses.MISSING else
     (f.name, typing.get_type_hints(RunConfig)[f.name])
     for f in fields(RunConfig) if f.name not in SECTIONS],
)
