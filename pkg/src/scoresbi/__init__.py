"""Simulation-based posterior inference with score-matched Langevin sampling.

Workflow: localize near the data with a sliced-Wasserstein moment match,
simulate reference tables around the localized proposal, fit a score network
with curvature and mean-zero regularization, then draw posterior samples by
annealed Langevin dynamics driven by the fitted score.
"""

from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    LocalizationFailure,
    NumericalError,
    SamplerFailure,
    StageFailure,
    TrainingFailure,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "DomainError",
    "LocalizationFailure",
    "NumericalError",
    "SamplerFailure",
    "StageFailure",
    "TrainingFailure",
]

__version__ = "0.1.0"
