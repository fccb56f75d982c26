"""Exception types shared across the package."""
from __future__ import annotations


class ShearlessError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(ShearlessError):
    """An argument violates a documented precondition."""


class ConfigError(InvalidInput):
    """A run configuration is malformed; carries the offending field name."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class FormatError(ShearlessError):
    """A data file does not match its declared on-disk layout."""


class DomainEscape(ShearlessError):
    """A trajectory left the domain of definition beyond the allowed margin."""

    def __init__(self, message: str = "trajectory left the domain", escape_time: float | None = None):
        self.escape_time = escape_time
        if escape_time is not None:
            message = f"{message} (t = {escape_time:g})"
        super().__init__(message)


class BudgetExceeded(ShearlessError):
    """An iteration/step budget was exhausted before completion."""


class NumericalBlowup(ShearlessError):
    """Non-finite values appeared during integration."""


class SignalOutOfRange(ShearlessError):
    """A sampled signal was queried outside its recorded time support."""


class IsotropicPoint(ShearlessError):
    """Eigenvector direction requested where the two strain eigenvalues coincide."""


class Stagnation(ShearlessError):
    """A curve integration stopped making progress."""


class DegenerateField(ShearlessError):
    """The strain field is isotropic almost everywhere; zero sets are not curves."""


class FieldQuality(ShearlessError):
    """Too many invalid nodes for the requested operation to be meaningful."""


class StageFailure(ShearlessError):
    """A pipeline stage failed; carries the stage name for attribution."""

    def __init__(self, stage: str, original: BaseException):
        self.stage = stage
        self.original = original
        super().__init__(f"stage '{stage}' failed: {original}")
