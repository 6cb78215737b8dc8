"""
Exception types raised by the ISCLP engine.

The CLI maps every IsclpError (ConfigurationError, InputError and
NumericalError) to exit code 1 and any other exception to exit code 2.
"""

from typing import Optional


class IsclpError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(IsclpError, ValueError):
    """Invalid parameter combination (window/hop, filter length, ...)."""


class InputError(IsclpError, ValueError):
    """Malformed input data: empty or non-finite signals, bad shapes, missing files."""


class NumericalError(IsclpError, ArithmeticError):
    """
    A factorization or solve could not be carried out.

    Attributes:
        minor: Order of the leading minor that is not positive definite
               (Cholesky failures only)
        index: Batch index of the failing matrix, when the input was batched
    """

    def __init__(
        self, message: str, minor: Optional[int] = None, index: Optional[tuple] = None
    ):
        super().__init__(message)
        self.minor = minor
        self.index = index
