"""Exception types shared across the package.

Every error raised by public API functions derives from FnosegError so
callers (and the CLI exit-code mapping) can distinguish failure classes.
"""


class FnosegError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(FnosegError):
    """A configuration value is out of its documented range."""


class DimensionError(FnosegError):
    """A spatial dimension is too small for the requested operation."""


class ShapeMismatchError(FnosegError):
    """Operand shapes are inconsistent."""


class ChannelMismatchError(ShapeMismatchError):
    """Channel counts of an operand and a weight do not agree."""


class EmptyMaskError(FnosegError):
    """A mode mask retains no Fourier mode."""


class TargetSizeError(FnosegError):
    """Requested upsampling target is not reachable by a stride-2 kernel."""


class TapeConsumedError(FnosegError):
    """backward() was called on a tape that has no recorded forward pass."""


class CheckpointError(FnosegError):
    """Base class for checkpoint file problems."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint header or payload failed validation."""


class VolumeFormatError(FnosegError):
    """Base class for volume file problems."""


class CorruptHeaderError(VolumeFormatError):
    """Volume file magic or header failed validation."""


class TruncatedPayloadError(VolumeFormatError):
    """Volume file payload is shorter than the header promises."""


class UnknownVersionError(VolumeFormatError):
    """Volume file format version is not supported."""


class DatasetError(FnosegError):
    """Dataset generation or manifest problem (empty split, bad spec)."""


class LabelAlphabetError(FnosegError):
    """A label volume contains values outside the declared alphabet."""


class NumericalError(FnosegError):
    """A non-finite value appeared where the contract forbids it."""


class OptimizerOrderError(FnosegError):
    """An optimizer step was requested before gradients were populated."""


class ScheduleRangeError(FnosegError):
    """A schedule was queried outside [0, total_epochs]."""


class GradCheckError(FnosegError):
    """A finite-difference gradient check exceeded its tolerance."""
