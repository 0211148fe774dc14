"""Exception types shared across the package."""

from __future__ import annotations

__all__ = [
    "DimensionError",
    "DomainError",
    "NumericalError",
    "LocalizationFailure",
    "TrainingFailure",
    "SamplerFailure",
    "ConfigError",
    "StageFailure",
]


class DimensionError(ValueError):
    """An array argument has the wrong shape."""


class DomainError(ValueError):
    """A value lies outside its documented domain."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared in a numeric routine."""


class LocalizationFailure(RuntimeError):
    """Too few pool members converged to build a proposal."""


class TrainingFailure(RuntimeError):
    """No training candidate produced a finite validation loss."""


class SamplerFailure(RuntimeError):
    """Most chains diverged during Langevin sampling."""


class ConfigError(ValueError):
    """An experiment configuration is inconsistent or incomplete."""


class StageFailure(RuntimeError):
    """A pipeline stage failed; carries the stage name and original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
