"""Plain-text ``key = value`` config files.

One assignment per line, ``#`` starts a comment, list values are comma
separated. Values stay strings here; typed conversion is the caller's job.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_kv(values: Mapping[str, object], header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def read_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def as_int(values: Mapping[str, str], key: str) -> int:
    try:
        return int(values[key])
    except KeyError:
        raise ConfigError(f"missing key {key!r}") from None
    except ValueError:
        raise ConfigError(f"{key}: not an integer: {values[key]!r}") from None


def as_int_list(values: Mapping[str, str], key: str) -> tuple[int, ...]:
    if key not in values:
        raise ConfigError(f"missing key {key!r}")
    raw = values[key].strip()
    if not raw:
        return ()
    try:
        return tuple(int(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"{key}: not an integer list: {raw!r}") from None


def as_bool(values: Mapping[str, str], key: str, default: bool) -> bool:
    if key not in values:
        return default
    raw = values[key].strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: not a boolean: {values[key]!r}")
