"""Flat key = value configuration files with # comments.

No sections, no nesting: one `key = value` per line, `#` starts a comment
anywhere, arrays are comma-separated.  Typed accessors validate and convert;
missing keys without defaults fail loudly with the file name.
"""

from __future__ import annotations

from pathlib import Path

__all__ = ["parse_config_text", "load_config", "ConfigError", "Config"]


class ConfigError(ValueError):
    pass


class _Required:
    def __repr__(self):
        return "<required>"


_REQUIRED = _Required()


def parse_config_text(text: str) -> dict:
    """Parse flat key = value lines into a dict of strings."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> "Config":
    text = Path(path).read_text(encoding="utf-8")
    return Config(parse_config_text(text), source=str(path))


class Config:
    """Typed access over a parsed flat config."""

    def __init__(self, values: dict, source: str = "<memory>"):
        self.values = dict(values)
        self.source = source

    def has(self, key: str) -> bool:
        return key in self.values

    def canonical_text(self) -> str:
        """Sorted key=value rendering, independent of comments and ordering.

        Manifest hashes are taken over this, so two files that parse to the
        same mapping get the same hash.
        """
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values))

    def _raw(self, key: str, default):
        if key in self.values:
            return self.values[key]
        if default is _REQUIRED:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return default

    def get_str(self, key: str, default=_REQUIRED) -> str:
        v = self._raw(key, default)
        return v

    def get_int(self, key: str, default=_REQUIRED) -> int:
        v = self._raw(key, default)
        if not isinstance(v, str):
            return v
        try:
            return int(v)
        except ValueError as e:
            raise ConfigError(f"{self.source}: key {key!r} is not an integer: {v!r}") from e

    def get_float(self, key: str, default=_REQUIRED) -> float:
        v = self._raw(key, default)
        if not isinstance(v, str):
            return v
        try:
            return float(v)
        except ValueError as e:
            raise ConfigError(f"{self.source}: key {key!r} is not a number: {v!r}") from e

    def get_bool(self, key: str, default=_REQUIRED) -> bool:
        v = self._raw(key, default)
        if not isinstance(v, str):
            return v
        low = v.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self.source}: key {key!r} is not a boolean: {v!r}")

    def get_int_list(self, key: str, default=_REQUIRED):
        v = self._raw(key, default)
        if not isinstance(v, str):
            return v
        try:
            return [int(s.strip()) for s in v.split(",") if s.strip()]
        except ValueError as e:
            raise ConfigError(f"{self.source}: key {key!r} is not an integer list") from e

    def get_float_list(self, key: str, default=_REQUIRED):
        v = self._raw(key, default)
        if not isinstance(v, str):
            return v
        try:
            return [float(s.strip()) for s in v.split(",") if s.strip()]
        except ValueError as e:
            raise ConfigError(f"{self.source}: key {key!r} is not a number list") from e
