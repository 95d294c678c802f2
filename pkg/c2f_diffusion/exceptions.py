"""Exception types raised across c2f-diffusion.

Each error subclasses the builtin that callers would naturally catch for the
same situation, so ``except ValueError`` around a bad parameter keeps working.
"""

from typing import Iterable, List, Optional


class C2FError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(C2FError, ValueError):
    """A parameter is outside its documented domain."""


class InvalidInputError(C2FError, ValueError):
    """Input data (fields, samples, files) does not satisfy a precondition."""


class InvalidStateError(C2FError, RuntimeError):
    """An object is not in a state that allows the requested operation."""


class NonFiniteError(InvalidStateError):
    """A loss or state became NaN/inf during an iterative procedure."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class CheckpointMismatchError(InvalidInputError):
    """A checkpoint fingerprint does not match the active configuration."""

    def __init__(self, differing_keys: Iterable[str]):
        self.differing_keys: List[str] = sorted(differing_keys)
        super().__init__(
            "Checkpoint fingerprint mismatch on keys: "
            + ", ".join(self.differing_keys)
        )
