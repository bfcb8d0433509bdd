"""Exception types shared across the package."""


class OscsgmError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(OscsgmError, ValueError):
    """Invalid argument or configuration value."""


class DimensionMismatchError(ValidationError):
    """An array argument has the wrong length/shape for the network."""

    def __init__(self, field: str, expected, actual):
        self.field = field
        self.expected = expected
        self.actual = actual
        super().__init__(f"dimension mismatch for '{field}': expected {expected}, got {actual}")


class ScheduleFormatError(OscsgmError):
    """Base class for schedule-file load failures."""


class ScheduleVersionError(ScheduleFormatError):
    """Schedule file declares an unsupported format version."""


class ScheduleSchemaError(ScheduleFormatError):
    """Schedule file violates the documented line schema."""


class ScheduleChecksumError(ScheduleFormatError):
    """Schedule file checksum is missing or does not match the content."""


class IdxFormatError(OscsgmError):
    """Base class for IDX container parse failures."""


class IdxMagicError(IdxFormatError):
    """IDX magic number is not one of the supported values."""


class IdxTruncatedError(IdxFormatError):
    """IDX payload or header is shorter than its dimensions promise."""


class IdxDimOverflowError(IdxFormatError):
    """IDX dimensions are absurd (overflow or exceed the file size)."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files disagree on the number of items."""


class IntegrationBlowupError(OscsgmError):
    """A simulated trajectory left the guarded region or became non-finite."""

    def __init__(self, chain: int, step: int, threshold: float):
        self.chain = chain
        self.step = step
        self.threshold = threshold
        super().__init__(
            f"integration blew up on chain {chain} at step {step} (|x| > {threshold:g} or non-finite)"
        )


class TrainingDivergedError(OscsgmError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, snapshot: int, step: int):
        self.snapshot = snapshot
        self.step = step
        super().__init__(f"training diverged at snapshot {snapshot}, step {step}")
