"""INI run configuration, defaults materialisation, and config hashing.

A run config has up to three sections; every key is optional::

    [train]
    steps = 2000
    batch_size = 64
    lr = 3e-4
    seed = 0

    [model]
    d = 64
    identifier = vector      ; none | vector | token
    layers_shared = 4

    [data]
    size = 2560
    seed = 0
    fraction = 1.0

An experiment spec adds ``[experiment]`` and one ``[arm.<name>]`` section per
arm holding model overrides (see :mod:`sharedenc.experiments`).
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
import types
import typing
from dataclasses import dataclass, field

from .encoder import ModelConfig
from .errors import ConfigError


@dataclass
class DataConfig:
    size: int = 2560
    seed: int = 0
    fraction: float = 1.0

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError("[data] size: must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ConfigError("[data] fraction: must lie in (0, 1]")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 0
    eval_split: str = "test"
    eval_k: tuple[int, ...] = (1, 5, 10)
    checkpoint_path: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("[train] steps: must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("[train] batch_size: contrastive training needs N >= 2")
        if self.lr <= 0:
            raise ConfigError("[train] lr: must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("[train] beta1/beta2: must lie in [0, 1)")
        if self.eval_every < 0:
            raise ConfigError("[train] eval_every: must be >= 0")
        if not self.eval_k or min(self.eval_k) < 1:
            raise ConfigError("[train] eval_k: needs positive integers")
        self.eval_k = tuple(int(k) for k in self.eval_k)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        values = dict(values)
        model = ModelConfig.from_dict(values.pop("model", {}) or {})
        data = DataConfig(**(values.pop("data", {}) or {}))
        if "eval_k" in values:
            values["eval_k"] = tuple(values["eval_k"])
        return cls(model=model, data=data, **values)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {o!r}")


def config_hash(obj) -> str:
    """SHA-256 (first 16 hex chars) of the canonical JSON text of a resolved config."""
    if dataclasses.is_dataclass(obj):
        obj = dataclasses.asdict(obj)
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


# ------------------------------------------------------------- INI parsing

def _coerce(section: str, key: str, raw: str, tp):
    where = f"[{section}] {key}"
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if raw.strip().lower() in ("", "none", "null"):
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(section, key, raw, inner[0])
    if origin is tuple:
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(_coerce(section, key, p, args[0]) for p in parts)
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: expected {tp.__name__}, got {raw!r}") from None
    raise ConfigError(f"{where}: unsupported field type {tp!r}")


def section_values(parser: configparser.ConfigParser, section: str, cls) -> dict:
    """Coerce one INI section against the fields of dataclass ``cls``."""
    if not parser.has_section(section):
        return {}
    hints = typing.get_type_hints(cls)
    fields = {f.name for f in dataclasses.fields(cls)
              if not dataclasses.is_dataclass(hints.get(f.name))}
    out = {}
    for key, raw in parser.items(section):
        if key not in fields:
            raise ConfigError(f"[{section}] {key}: unknown key (allowed: {sorted(fields)})")
        out[key] = _coerce(section, key, raw, hints[key])
    return out


def read_ini(path: str | os.PathLike) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parser


def build_train_config(parser: configparser.ConfigParser) -> TrainConfig:
    try:
        model = ModelConfig(**section_values(parser, "model", ModelConfig))
        data = DataConfig(**section_values(parser, "data", DataConfig))
        return TrainConfig(model=model, data=data, **section_values(parser, "train", TrainConfig))
    except ConfigError as exc:
        raise exc
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_train_config(path: str | os.PathLike) -> TrainConfig:
    parser = read_ini(path)
    allowed = {"train", "model", "data"}
    extra = set(parser.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown section(s) {sorted(extra)} (allowed: {sorted(allowed)})")
    return build_train_config(parser)
