"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class SafeLearnError(Exception):
    """Base class for every error raised by this package."""


class ContractViolation(SafeLearnError, ValueError):
    """An input broke a documented precondition (shape, mode, ordering)."""


class ConfigError(SafeLearnError, ValueError):
    """A required configuration constant is missing or invalid."""


class NotEnoughSamples(SafeLearnError):
    """A statistic was requested before enough samples were collected."""

    def __init__(self, message: str, offending: tuple = ()):
        super().__init__(message)
        self.offending = tuple(offending)


class BoundNotValidYet(SafeLearnError):
    """A confidence bound was requested below its minimum sample count."""

    def __init__(self, kind: str, t: int, required: int):
        super().__init__(f"{kind} requires t >= {required}, got t = {t}")
        self.kind = kind
        self.t = t
        self.required = required


class SolverError(SafeLearnError, RuntimeError):
    """The QP solver failed to converge; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class OutOfDomain(SafeLearnError, ValueError):
    """A state lies outside the spatial grid's bounding box."""
