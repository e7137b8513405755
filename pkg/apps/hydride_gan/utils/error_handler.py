"""Exception hierarchy and error classification for CLI exit codes."""
from typing import Any, Dict, Optional

import structlog

logger = structlog.get_logger()


class HydrideGanError(Exception):
    """Base class for all pipeline errors."""


# Structural errors shared by parsing, encoding and geometry
class SingularLattice(HydrideGanError):
    """Lattice matrix with |det| below 1e-10."""


class InvariantViolation(HydrideGanError):
    """A value breaks a documented structural invariant."""


# POSCAR parsing
class PoscarError(HydrideGanError):
    """Base class for POSCAR format errors."""


class MalformedHeader(PoscarError):
    """Missing, short or unsupported header lines."""


class CountMismatch(PoscarError):
    """Counts line disagrees with the number of coordinate rows."""


class UnknownCoordinateMode(PoscarError):
    """Coordinate mode line is neither Direct nor Cartesian."""


# Encoding and datasets
class EncodingError(HydrideGanError):
    """Base class for tensor encoding errors."""


class TooManyAtoms(EncodingError):
    """More atoms of one species than rows in a block."""


class MissingHydrogen(EncodingError):
    """Structure has no hydrogen to place in the hydrogen block."""


class SlotConflict(EncodingError):
    """Slot map assigns two species to one block, or leaves a species unmapped."""


class NoAtoms(EncodingError):
    """Every coordinate block is empty after thresholding."""


class EmptyDirectory(EncodingError):
    """Dataset directory contains no POSCAR files."""


class DatasetFileError(EncodingError):
    """A dataset file failed to parse or encode."""

    def __init__(self, filename: str, cause: Exception):
        self.filename = filename
        self.cause = cause
        super().__init__(f"{filename}: {type(cause).__name__}: {cause}")


# Geometry
class GeometryError(HydrideGanError):
    """Base class for neighbor-search and constraint errors."""


class NoPenalizedPairs(GeometryError):
    """No penalized species pair has a first neighbor inside the cutoff."""


class ImageSearchTooLarge(GeometryError):
    """Periodic image enumeration exceeds the configured maximum."""


# Neural kernel
class NetworkError(HydrideGanError):
    """Base class for dense-network errors."""


class DimensionMismatch(NetworkError):
    """Input width does not match the network or loss operands differ in size."""


class StaleCache(NetworkError):
    """Upstream gradient does not match the cached forward pass."""


# Training
class TrainingError(HydrideGanError):
    """Base class for training errors."""


class NonFiniteLoss(TrainingError):
    """A loss became NaN or infinite."""

    def __init__(self, epoch: int, batch: int, snapshot: Dict[str, Any]):
        self.epoch = epoch
        self.batch = batch
        self.snapshot = snapshot
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {snapshot}")


# Feature transfer
class TransferError(HydrideGanError):
    """Base class for feature-transfer errors."""


class SlotNotEmpty(TransferError):
    """Target placeholder block of the original sample is already occupied."""


class EmptyTransfer(TransferError):
    """Generated sample contributes no atoms to the placeholder block."""


class AllSamplesDropped(TransferError):
    """Every sample of a domain was dropped during transfer."""


# Pipeline
class ConfigError(HydrideGanError):
    """Invalid run configuration."""


class MissingReport(HydrideGanError):
    """Artifact directory has no validation summary."""


class StageFailure(HydrideGanError):
    """A pipeline stage failed; wraps the original error."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


class ErrorHandler:
    """Utility class for classifying errors into exit codes and messages."""

    EXIT_OK = 0
    EXIT_CONFIG = 1
    EXIT_STAGE = 2

    @staticmethod
    def classify(exception: Exception) -> str:
        """
        Classify an error into a short type string for log events.

        Args:
            exception: Exception object

        Returns:
            Error type string
        """
        if isinstance(exception, StageFailure):
            return ErrorHandler.classify(exception.cause)
        if isinstance(exception, ConfigError):
            return "config"
        if isinstance(exception, (PoscarError, DatasetFileError, EmptyDirectory)):
            return "input_data"
        if isinstance(exception, (SingularLattice, InvariantViolation, EncodingError)):
            return "structure"
        if isinstance(exception, GeometryError):
            return "geometry"
        if isinstance(exception, NonFiniteLoss):
            return "divergence"
        if isinstance(exception, (NetworkError, TrainingError)):
            return "training"
        if isinstance(exception, TransferError):
            return "transfer"
        if isinstance(exception, MissingReport):
            return "report"
        if isinstance(exception, (FileNotFoundError, PermissionError)):
            return "filesystem"
        return "unknown"

    @staticmethod
    def exit_code_for(exception: Optional[Exception]) -> int:
        """
        Map an error to the CLI exit code.

        Args:
            exception: Exception object or None for success

        Returns:
            0 on success, 1 for configuration errors, 2 for stage failures
        """
        if exception is None:
            return ErrorHandler.EXIT_OK
        if isinstance(exception, ConfigError):
            return ErrorHandler.EXIT_CONFIG
        return ErrorHandler.EXIT_STAGE

    @staticmethod
    def describe(exception: Exception) -> str:
        """
        Build a one-line message for the terminal.

        Args:
            exception: Exception object

        Returns:
            Human-readable message
        """
        error_type = ErrorHandler.classify(exception)
        if isinstance(exception, StageFailure):
            message = f"[{error_type}] stage '{exception.stage}': {exception.cause}"
        else:
            message = f"[{error_type}] {exception}"
        if isinstance(exception, NonFiniteLoss) or (
            isinstance(exception, StageFailure) and isinstance(exception.cause, NonFiniteLoss)
        ):
            message += " (try a lower learning rate or fewer hidden layers)"
        logger.debug("error_described", error_type=error_type, message=message[:200])
        return message
