"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes or sizes of the inputs do not line up."""


class InvalidArgumentError(ValueError):
    """An argument value is outside the supported domain."""


class CapacityError(ValueError):
    """A dense materialization would exceed the configured size cap."""


class NumericError(ValueError):
    """A computation produced or received non-finite values."""


class ArchiveError(ValueError):
    """Base class for weight-archive problems."""


class ArchiveFormatError(ArchiveError):
    """The file is not a well-formed weight archive."""


class ArchiveVersionError(ArchiveError):
    """The archive was written with an unsupported format version."""


class InvariantViolationError(ArchiveError):
    """Archive contents describe a model that violates its own invariants."""
