"""
Error Hierarchy for the YOdar Fusion Pipeline
=============================================
Author: Perception Fusion Team

Every failure the pipeline reports on purpose derives from ``YodarError``. Each class
carries the process exit code the command line maps it to:

- 0: success (no exception)
- 1: usage or configuration error
- 2: data or schema error
- 3: numeric failure

Structural and domain errors also derive from ``ValueError`` so library callers can
catch them the usual way.
"""

from typing import Optional


class YodarError(Exception):
    """Root of all errors raised deliberately by the pipeline."""

    exit_code: int = 1


class ConfigError(YodarError):
    """Invalid configuration, unknown keys or bad command-line usage."""

    exit_code = 1


class DataError(YodarError):
    """Missing artifacts or data that cannot be processed."""

    exit_code = 2


class SchemaError(DataError):
    """Artifact header names an unknown schema, a newer version or another kind."""


class ArtifactParseError(DataError):
    """
    Malformed artifact content.

    Attributes:
        path (str): File that failed to parse
        line (Optional[int]): 1-based line number of the offending content
    """

    def __init__(self, path: str, message: str, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {message}")


class ArtifactValidationError(DataError):
    """
    Artifact parsed but its payload violates a type invariant.

    Attributes:
        path (str): File that was loaded
        invariant (str): Name of the violated invariant or field path
    """

    def __init__(self, path: str, invariant: str, message: str):
        self.path = path
        self.invariant = invariant
        super().__init__(f"{path}: invariant '{invariant}' violated: {message}")


class NumericError(YodarError):
    """Non-finite values or divergence during optimization."""

    exit_code = 3


class ShapeError(YodarError, ValueError):
    """Array or record shape does not match what the operation expects."""

    exit_code = 2


class DomainError(YodarError, ValueError):
    """Input lies outside the mathematical domain of an operation."""

    exit_code = 2
