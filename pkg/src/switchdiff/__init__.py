"""Fairness-aware diffusion sampling by attribute switching, at desk scale."""

__version__ = "0.1.0"

from switchdiff.errors import (
    ConfigError,
    DomainError,
    InputError,
    NotFoundError,
    NumericalError,
    SwitchDiffError,
)
from switchdiff.gmm import Component, ConditionalGmm, LabeledSet, default_gmm
from switchdiff.schedule import TimeGrid, VpSchedule, make_grid

__all__ = [
    "__version__",
    "Component",
    "ConditionalGmm",
    "ConfigError",
    "DomainError",
    "InputError",
    "LabeledSet",
    "NotFoundError",
    "NumericalError",
    "SwitchDiffError",
    "TimeGrid",
    "VpSchedule",
    "default_gmm",
    "make_grid",
]
