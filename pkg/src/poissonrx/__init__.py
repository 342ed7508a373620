"""Poisson-receiver analysis of coded random access."""

from .core import (
    CapacityError,
    ChannelModel,
    DegreeDistribution,
    PoissonReceiver,
    ValidationError,
    as_load,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ChannelModel",
    "DegreeDistribution",
    "PoissonReceiver",
    "ValidationError",
    "as_load",
    "__version__",
]
