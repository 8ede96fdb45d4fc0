"""Flat ``key = value`` run configuration.

One pair per line, dotted section keys (``measure.kind``), ``#`` starts a
comment. Values stay strings until a typed getter reads them; every getter
records the resolved value so outputs can embed the full configuration.
Keys that no getter consumed are reported as errors, which catches typos.
"""

import math

import numpy as np

from levyscope.errors import ConfigError


def parse_text(text):
    """Map key -> (raw value, line number)."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("<syntax>", f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or any(c.isspace() for c in key):
            raise ConfigError(key or "<syntax>", "malformed key", lineno)
        if key in entries:
            raise ConfigError(key, f"duplicate key (first set on line {entries[key][1]})", lineno)
        entries[key] = (value, lineno)
    return entries


class Config:
    """Typed, validating view of a parsed config file."""

    def __init__(self, entries, source="<string>"):
        self.entries = dict(entries)
        self.source = source
        self.resolved = {}

    @classmethod
    def from_text(cls, text, source="<string>"):
        return cls(parse_text(text), source)

    @classmethod
    def from_path(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))

    def has(self, key):
        return key in self.entries

    def line(self, key):
        return self.entries.get(key, (None, None))[1]

    def fail(self, key, message):
        raise ConfigError(key, message, self.line(key))

    def _raw(self, key, default, required):
        if key in self.entries:
            return self.entries[key][0]
        if required:
            raise ConfigError(key, "required key is missing")
        return default

    def keys_with_prefix(self, prefix):
        return sorted(k for k in self.entries if k.startswith(prefix))

    def _record(self, key, value):
        self.resolved[key] = value
        return value

    def get_str(self, key, default=None, choices=None, required=False):
        value = self._raw(key, default, required)
        if value is not None and choices is not None and value not in choices:
            self.fail(key, f"must be one of {', '.join(choices)}; got {value!r}")
        return self._record(key, value)

    def get_float(self, key, default=None, required=False, check=None, why=""):
        raw = self._raw(key, default, required)
        if raw is None:
            return self._record(key, None)
        try:
            value = float(raw)
        except (TypeError, ValueError):
            self.fail(key, f"expected a number, got {raw!r}")
        if math.isnan(value):
            self.fail(key, "NaN is not allowed")
        if check is not None and not check(value):
            self.fail(key, why or f"value {value} is out of range")
        return self._record(key, value)

    def get_int(self, key, default=None, required=False, check=None, why=""):
        raw = self._raw(key, default, required)
        if raw is None:
            return self._record(key, None)
        try:
            value = int(str(raw))
        except ValueError:
            self.fail(key, f"expected an integer, got {raw!r}")
        if check is not None and not check(value):
            self.fail(key, why or f"value {value} is out of range")
        return self._record(key, value)

    def get_bool(self, key, default=False):
        raw = self._raw(key, default, False)
        if isinstance(raw, bool):
            return self._record(key, raw)
        low = str(raw).lower()
        if low in ("1", "true", "yes", "on"):
            return self._record(key, True)
        if low in ("0", "false", "no", "off"):
            return self._record(key, False)
        self.fail(key, f"expected true/false, got {raw!r}")

    def get_floats(self, key, default=None, required=False, length=None):
        """Comma-separated numbers."""
        raw = self._raw(key, default, required)
        if raw is None:
            return self._record(key, None)
        if isinstance(raw, (list, tuple)):
            values = [float(v) for v in raw]
        else:
            try:
                values = [float(v) for v in str(raw).split(",") if v.strip()]
            except ValueError:
                self.fail(key, f"expected comma-separated numbers, got {raw!r}")
        if length is not None and len(values) != length:
            self.fail(key, f"expected {length} numbers, got {len(values)}")
        return self._record(key, values)

    def get_points(self, key, dim, default=None, required=False):
        """Points separated by ``;``, coordinates by ``,``."""
        raw = self._raw(key, default, required)
        if raw is None:
            return self._record(key, None)
        pts = []
        for chunk in str(raw).split(";"):
            if not chunk.strip():
                continue
            try:
                coords = [float(v) for v in chunk.split(",")]
            except ValueError:
                self.fail(key, f"bad point {chunk.strip()!r}")
            if len(coords) != dim:
                self.fail(key, f"point {chunk.strip()!r} has {len(coords)} coordinates, need {dim}")
            pts.append(coords)
        if not pts:
            self.fail(key, "no points given")
        self._record(key, str(raw))
        return np.array(pts)

    def check_consumed(self):
        extra = [k for k in self.entries if k not in self.resolved]
        if extra:
            key = min(extra, key=lambda k: self.entries[k][1])
            raise ConfigError(key, "unknown key for this subcommand", self.entries[key][1])

    def provenance(self):
        """Resolved configuration in a stable order."""
        return {k: self.resolved[k] for k in sorted(self.resolved)}
