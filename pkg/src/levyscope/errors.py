"""Exception types and non-finite outcome markers shared across levyscope."""

import enum


class Outcome(enum.Enum):
    """Non-finite results that are legitimate values, not failures."""

    DIVERGENT = "divergent"
    NEG_INFINITY = "-inf"

    def __repr__(self):
        return f"Outcome.{self.name}"


DIVERGENT = Outcome.DIVERGENT
NEG_INFINITY = Outcome.NEG_INFINITY


class LevyscopeError(Exception):
    """Base class for all levyscope errors."""


class ZeroPoint(LevyscopeError, ValueError):
    pass


class NoDensity(LevyscopeError, ValueError):
    pass


class TolUnreachable(LevyscopeError, RuntimeError):
    pass


class OutsideBox(LevyscopeError, ValueError):
    pass


class NotContactPoint(LevyscopeError, ValueError):
    pass


class GridTooCoarse(LevyscopeError, ValueError):
    pass


class InconsistentGrids(LevyscopeError, ValueError):
    pass


class NoContacts(LevyscopeError, RuntimeError):
    pass


class CFLViolation(LevyscopeError, ValueError):
    pass


class NonConvergence(LevyscopeError, RuntimeError):
    """Iteration budget exhausted; ``history`` holds the residual trace."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ConfigError(LevyscopeError, ValueError):
    """Invalid run configuration; names the offending field (and line, if known)."""

    def __init__(self, field, message, line=None):
        where = f"{field}" if line is None else f"{field} (line {line})"
        super().__init__(f"{where}: {message}")
        self.field = field
        self.line = line
