"""Flat ``key = value`` configuration files and run-config resolution.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Keys are the field names of :class:`ModelConfig` (minus ``vocab_size`` and
``n_languages``, which come from the vocabulary and charsets),
:class:`TrainConfig`, plus ``beam_size`` and ``max_len`` for decoding.
``cnn_specs`` is written as ``5:2,5:2,1:1`` (kernel:stride per layer).

Precedence: command-line overrides > file values > built-in defaults.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .model import ConditioningMode, ModelConfig
from .trainer import TrainConfig

DECODE_KEYS = {"beam_size": int, "max_len": int}
_DERIVED = {"vocab_size", "n_languages"}


def parse_kv(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def load_kv(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_kv(p.read_text(encoding="utf-8"), str(p))


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _convert(key: str, value: str, typ):
    if value in ("none", "None", "null", ""):
        return None
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        typ = next(a for a in typing.get_args(typ) if a is not type(None))
    try:
        if typ is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if typ is ConditioningMode:
            return ConditioningMode.parse(value)
        if key == "cnn_specs":
            return tuple(tuple(int(x) for x in layer.split(":")) for layer in value.split(","))
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {value!r}") from None
    return value


def _format(value) -> str:
    if isinstance(value, ConditioningMode):
        return value.value
    if isinstance(value, (tuple, list)) and value and isinstance(value[0], (tuple, list)):
        return ",".join(":".join(str(x) for x in layer) for layer in value)
    return "none" if value is None else str(value)


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)      # ModelConfig kwargs except derived sizes
    train: TrainConfig = field(default_factory=TrainConfig)
    beam_size: int = 10
    max_len: Optional[int] = None

    @classmethod
    def resolve(cls, file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> "RunConfig":
        merged = dict(file_values or {})
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        model_types = {k: v for k, v in _field_types(ModelConfig).items() if k not in _DERIVED}
        train_types = _field_types(TrainConfig)
        model_kw, train_kw, decode_kw = {}, {}, {}
        for key, value in merged.items():
            if key in _DERIVED:
                continue    # provenance files record them; the vocabulary decides
            if key in model_types:
                target, typ = model_kw, model_types[key]
            elif key in train_types:
                target, typ = train_kw, train_types[key]
            elif key in DECODE_KEYS:
                target, typ = decode_kw, DECODE_KEYS[key]
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
            target[key] = _convert(key, value, typ) if isinstance(value, str) else value
        return cls(model=model_kw, train=TrainConfig(**train_kw), **decode_kw)

    def model_config(self, vocab_size: int, n_languages: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, n_languages=n_languages, **self.model)

    def to_text(self, vocab_size: Optional[int] = None, n_languages: Optional[int] = None) -> str:
        lines = ["# resolved run configuration"]
        if vocab_size is not None:
            mc = self.model_config(vocab_size, n_languages)
            for f in dataclasses.fields(ModelConfig):
                lines.append(f"{f.name} = {_format(getattr(mc, f.name))}")
        else:
            for k, v in self.model.items():
                lines.append(f"{k} = {_format(v)}")
        for f in dataclasses.fields(TrainConfig):
            lines.append(f"{f.name} = {_format(getattr(self.train, f.name))}")
        lines.append(f"beam_size = {self.beam_size}")
        lines.append(f"max_len = {_format(self.max_len)}")
        return "\n".join(lines) + "\n"
