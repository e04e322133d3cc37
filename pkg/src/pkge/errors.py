"""Exception types raised by the pkge package.

Argument validation uses plain ValueError; everything tied to external
input (triple files, checkpoints) or numeric health gets its own class so
callers can map failures to distinct exit codes.
"""

from __future__ import annotations


class PkgeError(Exception):
    """Base class for package-specific errors."""


class TripleParseError(PkgeError):
    """A triple file line could not be parsed."""

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class VocabularyError(PkgeError):
    """Labels not present in a fixed vocabulary were encountered."""

    def __init__(self, message: str, offenders: list[str]):
        super().__init__(message)
        self.offenders = offenders


class NumericError(PkgeError):
    """A non-finite value showed up where only finite values are allowed."""


class CheckpointError(PkgeError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Unknown magic or unsupported checkpoint version."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint ended before all promised rows were read."""


class CheckpointRowError(CheckpointError):
    """A checkpoint row has the wrong field count or unparseable values."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
