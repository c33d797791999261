"""Consolidating many 2-D effect adapters into one low-rank student adapter
via multi-teacher on-policy distillation, with few-step sampling, an
evaluation harness, and a serving-cost simulator.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, RetrievalError, SerializationError,
                     TrainingDiverged, UsageError)

__all__ = [
    "ConfigError",
    "RetrievalError",
    "SerializationError",
    "TrainingDiverged",
    "UsageError",
    "__version__",
]
