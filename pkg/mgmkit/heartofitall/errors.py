# exception hierarchy shared by every mgmkit module
# each class also derives from the closest builtin so plain `except ValueError` still works

from __future__ import annotations
from typing import List, Optional


class MgmError(Exception):
    """Root of all mgmkit errors."""


class ShapeError(MgmError, ValueError):
    pass


class DomainError(MgmError, ValueError):
    pass


class ArgumentError(MgmError, ValueError):
    pass


class NumericError(MgmError, ArithmeticError):
    pass


class ConfigError(MgmError, ValueError):
    def __init__(self, message: str, errors: Optional[List[str]] = None) -> None:
        self.errors: List[str] = list(errors) if errors else [message]
        super().__init__(message)


class CheckpointError(MgmError, IOError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptionError(CheckpointError):
    pass


def expect_shape(name: str, actual, expected) -> None:
    # None in `expected` matches any size on that axis
    actual = tuple(actual)
    expected = tuple(expected)
    if len(actual) != len(expected) or any(e is not None and a != e for a, e in zip(actual, expected)):
        raise ShapeError(f"{name}: expected shape {expected}, got {actual}")
