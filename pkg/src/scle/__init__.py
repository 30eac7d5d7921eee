"""Numerical laboratory for Markov transition semigroups under the strict topology."""

from scle.errors import (
    DomainError,
    HorizonFailure,
    PreconditionError,
    UnsupportedBackendError,
    ValidationError,
)
from scle.state_space import CompactSet, StateSpace, distance, exhaustion_member

__version__ = "0.1.0"

__all__ = [
    "CompactSet",
    "DomainError",
    "HorizonFailure",
    "PreconditionError",
    "StateSpace",
    "UnsupportedBackendError",
    "ValidationError",
    "distance",
    "exhaustion_member",
]
