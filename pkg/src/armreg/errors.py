"""Exception types shared across the package."""

import numpy as np


class DomainError(ValueError):
    """A function was evaluated outside its domain."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A matrix expected to be symmetric positive definite is not."""


class NumericalError(ArithmeticError):
    """An inner linear solve or decomposition failed."""


class StabilityError(ValueError):
    """The explicit Euler step violates the stability safeguard.

    ``max_step`` holds the largest admissible step size.
    """

    def __init__(self, message, max_step):
        super().__init__(message)
        self.max_step = max_step


class BracketError(ValueError):
    """A root-finding bracket does not contain a sign change."""
