"""Isogeometric Galerkin solver for insoluble surfactant spreading on thin films."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    DomainError,
    FilmIGAError,
    FrontNotFound,
    MissingKeyError,
    PositivityLoss,
    SolverFailure,
)

__all__ = [
    "__version__",
    "ConfigurationError",
    "DomainError",
    "FilmIGAError",
    "FrontNotFound",
    "MissingKeyError",
    "PositivityLoss",
    "SolverFailure",
]
