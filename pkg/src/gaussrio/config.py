"""Plain-text ``key = value`` configuration files mapped onto dataclasses."""

from __future__ import annotations

import argparse
import dataclasses
import typing
from pathlib import Path
from typing import Any, TypeVar

T = TypeVar("T")


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _field_types(cls) -> dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _convert(kind: Any, text: str) -> Any:
    if kind is bool:
        return _parse_bool(text)
    if kind in (int, float, str):
        return kind(text.strip())
    raise TypeError(f"unsupported config field type {kind!r}")


def read_kv_file(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def apply_overrides(cfg: T, values: dict[str, str], source: str = "config") -> T:
    types = _field_types(type(cfg))
    changes = {}
    for key, text in values.items():
        if key not in types:
            raise ConfigError(f"{source}: unknown key {key!r}")
        try:
            changes[key] = _convert(types[key], text)
        except ValueError as e:
            raise ConfigError(f"{source}: bad value for {key}: {e}") from None
    return dataclasses.replace(cfg, **changes)


def load_config(cls: type[T], path: str | Path | None = None, overrides: dict[str, str] | None = None) -> T:
    cfg = cls()
    if path is not None:
        cfg = apply_overrides(cfg, read_kv_file(path), str(path))
    if overrides:
        cfg = apply_overrides(cfg, overrides, "command line")
    return cfg


def dump_config(cfg) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def add_config_flags(parser: argparse.ArgumentParser, cls) -> None:
    """One ``--<key>`` option per dataclass field, parsed as text and defaulting to unset."""
    group = parser.add_argument_group(f"{cls.__name__} overrides")
    defaults = cls()
    for name, kind in _field_types(cls).items():
        group.add_argument(
            f"--{name}",
            dest=f"cfg__{name}",
            metavar=getattr(kind, "__name__", "VALUE").upper(),
            default=None,
            help=f"(default: {getattr(defaults, name)})",
        )


def collect_flag_overrides(args: argparse.Namespace) -> dict[str, str]:
    return {k[5:]: v for k, v in vars(args).items() if k.startswith("cfg__") and v is not None}
