"""Custom exception classes for delone-heat.

These exceptions provide specific error types for different failure modes,
and carry the exit code the command-line front end reports for them.
"""

from __future__ import annotations


class DeloneHeatException(Exception):
    """Base exception for all delone-heat errors."""

    exit_code: int = 2


class InvalidInputError(DeloneHeatException):
    """Raised when an operation rejects its input.

    Examples:
        - non-positive lattice spacing
        - jitter amplitude of half the spacing or more
        - margin larger than the window

    """

    exit_code = 2


class InvalidPointSetError(InvalidInputError):
    """Raised when a point set violates the Delone hypotheses.

    Examples:
        - two coincident points (not uniformly discrete)
        - fewer than two points in the window

    """


class UnsupportedDimensionError(InvalidInputError):
    """Raised when an operation is only implemented for some dimensions.

    Examples:
        - exact Voronoi cells requested for points in R^3

    """


class WindowTooSmallError(InvalidInputError):
    """Raised when the window cannot support the requested computation.

    Examples:
        - tiling margin below 2R (cells not locally determined)
        - every ball of a doubling scan touches the window boundary

    """


class BoundaryCellError(InvalidInputError):
    """Raised when a cell is requested for a point without a computed cell."""


class RelationAxiomError(InvalidInputError):
    """Raised when an ingested neighbor relation breaks the length bound.

    Attributes:
        pair: the offending id pair
        distance: its Euclidean length

    """

    def __init__(self, message: str, pair: tuple[int, int] | None = None, distance: float | None = None) -> None:
        super().__init__(message)
        self.pair = pair
        self.distance = distance


class InvalidWeightError(InvalidInputError):
    """Raised when vertex measures or edge weights are not positive."""


class InsufficientSamplesError(InvalidInputError):
    """Raised when too few samples survive admission filters."""


class ConfigError(InvalidInputError):
    """Raised when an experiment configuration fails validation."""


class StageInputError(InvalidInputError):
    """Raised when a pipeline stage cannot find the files of an upstream stage."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


class ExportError(InvalidInputError):
    """Raised when an artifact cannot be written or read."""


class NumericalError(DeloneHeatException):
    """Raised when a numerical procedure fails to deliver the requested accuracy."""

    exit_code = 3


class PenroseGenerationError(NumericalError):
    """Raised when no generic pentagrid offsets are found within the re-draw budget."""


class KrylovConvergenceError(NumericalError):
    """Raised when the Lanczos exponential does not reach its tolerance.

    Attributes:
        residual: a-posteriori error estimate at the last iteration

    """

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(message)
        self.residual = residual


class EigensolverError(NumericalError):
    """Raised when a sparse or dense eigensolver fails."""


class InsufficientEigenpairsError(NumericalError):
    """Raised when the spectral expansion cannot meet its truncation tolerance.

    Attributes:
        achieved_bound: tail bound reached with the largest eigenpair budget

    """

    def __init__(self, message: str, achieved_bound: float) -> None:
        super().__init__(message)
        self.achieved_bound = achieved_bound


class VerificationFailure(DeloneHeatException):
    """Raised when an enabled verification check fails."""

    exit_code = 1
