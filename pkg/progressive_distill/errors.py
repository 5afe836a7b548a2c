# progressive_distill/errors.py

from typing import List, Optional


class DistillError(Exception):
    """Base class for every domain failure raised by progressive_distill."""


class ShapeError(DistillError, ValueError):
    """Tensor shapes do not agree for the requested operation."""


class GradientError(DistillError):
    """Backward pass requested on something that cannot be differentiated."""


class NumericalError(DistillError):
    """A value left the finite range (NaN / Inf)."""


class ConfigurationError(DistillError, ValueError):
    """A model, optimizer or run configuration is internally inconsistent."""


class DataError(DistillError, ValueError):
    """Input data violates a precondition (ids out of range, empty corpus, ...)."""


class LabelError(DataError):
    """A label is missing or invalid for the task kind."""


class CheckpointError(DistillError):
    """A checkpoint file cannot be read back."""


class ChecksumError(CheckpointError):
    """Stored checksum does not match the bytes it covers."""

    def __init__(self, path: str, start: int, end: int):
        self.path = path
        self.start = start
        self.end = end
        super().__init__(f"checksum mismatch in {path} over bytes [{start}, {end})")


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class ScheduleViolationError(DistillError):
    """A curriculum schedule breaks the one-change rule or a stage invariant."""

    def __init__(self, report: "Optional[object]" = None, message: Optional[str] = None):
        self.report = report
        super().__init__(message or str(report))


def join_problems(problems: List[str]) -> str:
    return "; ".join(problems)
