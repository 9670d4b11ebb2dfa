"""Exception hierarchy shared by every subpackage.

``InputError`` subclasses signal bad user input (the CLI maps them to exit
code 2); ``RuntimeFailure`` subclasses signal failures while doing the work
(exit code 3).
"""

from __future__ import annotations


class MapPriorError(Exception):
    """Base class for all package errors."""


class InputError(MapPriorError, ValueError):
    """Rejected input: out-of-range value, wrong shape, invalid config field."""


class RuntimeFailure(MapPriorError, RuntimeError):
    """Failure raised while processing otherwise valid input."""


class ParseError(InputError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CoverageError(InputError):
    """Raster or tile coverage does not contain the requested window."""

    def __init__(self, message: str, missing=None):
        self.missing = missing
        super().__init__(message)


class FetchError(RuntimeFailure):
    def __init__(self, message: str, tile=None):
        self.tile = tile
        super().__init__(message)


class DecodeError(RuntimeFailure):
    def __init__(self, message: str, tile=None):
        self.tile = tile
        super().__init__(message)


class SchemaVersionError(InputError):
    pass


class IntegrityError(InputError):
    def __init__(self, message: str, missing: list[str] | None = None):
        self.missing = list(missing or [])
        super().__init__(message)


class ConfigMismatchError(InputError):
    pass


class TrainingError(RuntimeFailure):
    pass
