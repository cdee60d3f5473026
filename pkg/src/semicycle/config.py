"""Flat ``key = value`` config files for frozen dataclasses.

One assignment per line, ``#`` starts a comment. Values are parsed according to the
type of the field default: ints, floats, bools, strings and tuples written as
comma-separated items. Unknown keys are an error, never silently ignored.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

from .errors import ConfigError

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _parse_scalar(text: str, like: Any, key: str):
    if isinstance(like, bool):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(like).__name__}") from None
    if isinstance(like, str):
        return text
    raise ConfigError(f"{key}: unsupported field type {type(like).__name__}")


def _parse(text: str, like: Any, key: str):
    if isinstance(like, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        proto = like[0] if like else 0
        return tuple(_parse_scalar(t, proto, key) for t in items)
    return _parse_scalar(text, like, key)


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def loads(text: str, cls, base=None):
    """Parse ``text`` into ``cls``, starting from ``base`` (default: ``cls()``)."""
    base = cls() if base is None else base
    fields = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in updates:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        updates[key] = _parse(value, getattr(base, key), key)
    return dataclasses.replace(base, **updates)


def dumps(cfg) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))


def load(path, cls):
    return loads(Path(path).read_text(), cls)


def save(cfg, path) -> None:
    Path(path).write_text(dumps(cfg))
