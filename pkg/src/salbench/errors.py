"""Exception types shared across the package."""


class SalbenchError(Exception):
    """Base class for all package errors."""


class ShapeError(SalbenchError):
    """Tensor shape does not match what a layer or operation expects."""


class TapeConsumedError(SalbenchError):
    """A tape was asked to run backward more than once."""


class SelectorError(SalbenchError):
    """Backward selector names a class outside the logit range."""


class CheckpointError(SalbenchError):
    """Base class for checkpoint read failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class DatasetError(SalbenchError):
    """Dataset generation or ingestion failure."""


class DegenerateAttributionError(SalbenchError):
    """Attribution has no nonzero element, so normalized scores are undefined."""


class ConvergenceError(SalbenchError):
    """Iterative solver failed to reach its tolerance within the cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class PlanError(SalbenchError):
    """Experiment plan file is missing, malformed, or invalid."""
