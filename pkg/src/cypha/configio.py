"""Sectioned key/value config file parsing.

All on-disk configuration (simulation coefficients, controller thresholds,
scenario files, gateway key tables) uses the same plain-text format:

    [section]
    key = value        ; trailing comments with ';' or '#'

Unlike configparser, duplicate keys are legal (scenario event lists need
them) and every parsed entry carries its source line number so semantic
errors can point at the offending line.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Malformed config text; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class Entry:
    key: str
    value: str
    line: int


@dataclass
class Section:
    name: str
    line: int
    entries: list[Entry] = field(default_factory=list)

    def get(self, key: str, default: str | None = None) -> str | None:
        for e in self.entries:
            if e.key == key:
                return e.value
        return default

    def as_dict(self) -> dict[str, str]:
        # Last occurrence wins, matching plain key/value expectations.
        return {e.key: e.value for e in self.entries}


def parse_config(text: str) -> dict[str, Section]:
    """Parse sectioned key/value text into {section name: Section}."""
    sections: dict[str, Section] = {}
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            name = line[1:-1].strip()
            if name in sections:
                raise ConfigError(f"duplicate section [{name}]", lineno)
            current = Section(name, lineno)
            sections[name] = current
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if current is None:
            raise ConfigError("key/value pair before any [section]", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError("empty key", lineno)
        current.entries.append(Entry(key, value.strip(), lineno))
    return sections


def _strip_comment(line: str) -> str:
    # Comments start at an unquoted ';' or '#'. Values here never contain
    # quotes, so a simple scan is enough.
    for i, ch in enumerate(line):
        if ch in ";#":
            return line[:i]
    return line


def parse_float(sec: Section, key: str, default: float) -> float:
    raw = sec.get(key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}", _line_of(sec, key)) from None


def parse_int(sec: Section, key: str, default: int) -> int:
    raw = sec.get(key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}", _line_of(sec, key)) from None


def parse_range(sec: Section, key: str, default: tuple[float, float]) -> tuple[float, float]:
    """Parse 'lo, hi' into a closed interval, enforcing lo < hi."""
    raw = sec.get(key)
    if raw is None:
        return default
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"{key}: expected 'lo, hi', got {raw!r}", _line_of(sec, key))
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {raw!r}", _line_of(sec, key)) from None
    if not lo < hi:
        raise ConfigError(f"{key}: lower bound must be below upper, got {raw!r}", _line_of(sec, key))
    return lo, hi


def _line_of(sec: Section, key: str) -> int | None:
    for e in sec.entries:
        if e.key == key:
            return e.line
    return None
