"""Run configuration: one nested YAML document, validated against dataclasses.

Every tunable has a default; a config file and ``section.key=value``
overrides are layered on top.  Unknown keys are a hard error.
"""

import dataclasses
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .audio import AudioConfig
from .errors import ConfigurationError
from .evaluation import ProbeConfig
from .networks import ModelConfig
from .training import StageConfig

CONFIG_VERSION = 1


@dataclass
class EvalConfig:
    collapse_repeats: bool = False


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    out_dir: str = "run"
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: StageConfig = field(default_factory=StageConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self):
        def plain(v):
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return v
        return plain(asdict(self))

    def dump(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
        return path


def _coerce(value, tp, where):
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp in (int, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        if tp is int and float(value) != int(value):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return tp(value)
    if tp is str:
        return str(value)
    return value


def _build(cls, data, prefix, unknown):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in (data or {}).items():
        where = f"{prefix}{key}"
        if key not in names:
            unknown.append(where)
            continue
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{where}: expected a mapping")
            kwargs[key] = _build(tp, value, where + ".", unknown)
        else:
            kwargs[key] = _coerce(value, tp, where)
    return kwargs


def _instantiate(cls, kwargs):
    hints = typing.get_type_hints(cls)
    out = {}
    for k, v in kwargs.items():
        out[k] = _instantiate(hints[k], v) if dataclasses.is_dataclass(hints[k]) else v
    try:
        return cls(**out)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{cls.__name__}: {exc}") from exc


def _deep_merge(base, extra):
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text):
    """``"train.stage1_steps=10"`` -> ``{"train": {"stage1_steps": 10}}``."""
    if "=" not in text:
        raise ConfigurationError(f"override must look like section.key=value, got {text!r}")
    dotted, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    for part in reversed(dotted.strip().split(".")):
        value = {part: value}
    return value


def load_config(path=None, overrides=()):
    """Resolve defaults <- file <- overrides into a validated :class:`RunConfig`."""
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} must be a mapping")
    for ov in overrides:
        data = _deep_merge(data, parse_override(ov) if isinstance(ov, str) else ov)
    if data.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigurationError(f"unsupported config version {data.get('version')}")
    unknown = []
    kwargs = _build(RunConfig, data, "", unknown)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    return _instantiate(RunConfig, kwargs)
