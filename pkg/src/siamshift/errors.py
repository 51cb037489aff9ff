"""Exception hierarchy shared by all subpackages."""


class SiamShiftError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SiamShiftError, ValueError):
    """An array shape does not satisfy an operation's contract."""


class DomainError(SiamShiftError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class ContractError(SiamShiftError, RuntimeError):
    """A call-order or state precondition was violated."""


class NumericalError(SiamShiftError, FloatingPointError):
    """An operation produced NaN or Inf."""


class FormatError(SiamShiftError, ValueError):
    """A file on disk has the wrong layout or format version."""


class TrainingError(SiamShiftError, RuntimeError):
    """Training diverged."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ConfigError(SiamShiftError, ValueError):
    """A run configuration failed validation."""
