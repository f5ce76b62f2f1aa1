"""Statevector simulation, quanvolution and adversarial evaluation for small quantum classifiers."""

from . import attacks, circuits, classifier, data, quanv, sim
from .errors import (
    ConfigurationError,
    FormatError,
    QPatchError,
    TrainingError,
    UndefinedMetricError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "attacks",
    "circuits",
    "classifier",
    "data",
    "quanv",
    "sim",
    "ConfigurationError",
    "FormatError",
    "QPatchError",
    "TrainingError",
    "UndefinedMetricError",
    "UsageError",
]
