"""Flat key/value experiment configs with dotted sections.

Files use INI syntax; ``[agent]`` + ``critic_tau = 0.01`` becomes the key
``agent.critic_tau``. Keys that appear before any section header are
filed under ``run``.
"""
from __future__ import annotations

import configparser
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


def parse_text(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc
    flat = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            flat[f"{section}.{key}"] = value
    return flat


def load(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_text(path.read_text())


def dump(flat: dict[str, object]) -> str:
    """Inverse of :func:`parse_text` for flat dotted dicts (sections sorted)."""
    sections: dict[str, dict[str, str]] = {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError("keys must be dotted", key)
        sections.setdefault(section, {})[name] = _fmt(value)
    lines = []
    for section in sorted(sections):
        lines.append(f"[{section}]")
        for name, value in sections[section].items():
            lines.append(f"{name} = {value}")
        lines.append("")
    return "\n".join(lines)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def get_int(flat, key, default=None) -> int | None:
    if key not in flat:
        return default
    try:
        return int(flat[key])
    except ValueError:
        raise ConfigError(f"expected an integer, got {flat[key]!r}", key) from None


def get_float(flat, key, default=None) -> float | None:
    if key not in flat:
        return default
    try:
        return float(flat[key])
    except ValueError:
        raise ConfigError(f"expected a number, got {flat[key]!r}", key) from None


def get_bool(flat, key, default=None) -> bool | None:
    if key not in flat:
        return default
    value = flat[key].strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {flat[key]!r}", key)


def get_str(flat, key, default=None) -> str | None:
    return flat[key].strip() if key in flat else default


def get_list(flat, key, cast=str, default=None) -> list | None:
    if key not in flat:
        return default
    items = [s.strip() for s in flat[key].split(",") if s.strip()]
    try:
        return [cast(s) for s in items]
    except ValueError:
        raise ConfigError(f"bad list entry in {flat[key]!r}", key) from None
