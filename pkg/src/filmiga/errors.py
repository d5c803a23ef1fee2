"""Exception types shared across the package."""


class FilmIGAError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FilmIGAError, ValueError):
    """Invalid sizes, parameters or configuration content."""


class MissingKeyError(ConfigurationError):
    def __init__(self, key: str):
        super().__init__(f"missing required configuration key: {key}")
        self.key = key


class DomainError(FilmIGAError, ValueError):
    """Evaluation point outside the parametric or physical domain."""


class PositivityLoss(FilmIGAError, ArithmeticError):
    """Physical film height h - f dropped to zero or below.

    Raised during assembly; the time-step controller treats it as a
    rejected step.
    """

    def __init__(self, min_height: float):
        super().__init__(f"film height lost positivity (min h_p = {min_height:.3e})")
        self.min_height = min_height


class SolverFailure(FilmIGAError, RuntimeError):
    """Linear or nonlinear solve did not succeed."""


class FrontNotFound(FilmIGAError, ValueError):
    """No threshold crossing along the scan direction."""
