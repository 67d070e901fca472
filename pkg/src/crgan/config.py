"""Strict dataclass construction from JSON-like mappings and ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from pathlib import Path

from crgan.errors import ConfigError


def _accepts(tp, value) -> bool:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        return any(_accepts(arg, value) for arg in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if tp is bool:
        return isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tp is str:
        return isinstance(value, str)
    if origin is list:
        (item,) = typing.get_args(tp) or (typing.Any,)
        return isinstance(value, list) and all(item is typing.Any or _accepts(item, v) for v in value)
    if origin is dict or tp is dict:
        return isinstance(value, dict)
    return True


def from_mapping(cls, mapping: dict, where: str = "config"):
    """Build dataclass ``cls`` from ``mapping``, rejecting unknown keys and type mismatches."""
    if not isinstance(mapping, dict):
        raise ConfigError(where, f"expected a JSON object, got {type(mapping).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in mapping.items():
        if key not in names:
            raise ConfigError(key, f"unknown key in {where} (known: {', '.join(sorted(names))})")
        if not _accepts(hints[key], value):
            raise ConfigError(key, f"expected {hints[key]}, got {value!r}")
    kwargs = {k: float(v) if hints[k] is float else v for k, v in mapping.items()}
    return cls(**kwargs)


def parse_override(text: str) -> tuple[str, object]:
    """``key=value``; the value is read as JSON when possible, else as a plain string."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(text, "override must look like key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(cls, path: str | Path | None, overrides: list[str] = ()):
    mapping: dict = {}
    if path is not None:
        try:
            mapping = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON ({exc})") from exc
        if not isinstance(mapping, dict):
            raise ConfigError(str(path), "top level must be a JSON object")
    for item in overrides:
        key, value = parse_override(item)
        mapping[key] = value
    return from_mapping(cls, mapping, str(path) if path else "config")


def to_mapping(obj) -> dict:
    return dataclasses.asdict(obj)
