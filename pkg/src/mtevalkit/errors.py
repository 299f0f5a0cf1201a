"""Exception hierarchy shared across the toolkit.

The CLI maps these onto stable exit codes: ValidationError -> 2,
DataError -> 3, anything else -> 4.
"""


class MtevalError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(MtevalError):
    """Invalid configuration, arguments, or invariant violation."""


class DataError(MtevalError):
    """Problems with input data: missing files, malformed records, misalignment."""


class MalformedRecordError(DataError):
    """A serialized record failed to parse or violates its schema."""

    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class DegenerateVarianceError(ValidationError):
    """A correlation was requested on a zero-variance input."""

    def __init__(self, side, message=None):
        self.side = side
        super().__init__(message or f"zero variance on side {side!r}")


class AlignmentError(DataError):
    """Score files do not cover identical segment sets."""

    def __init__(self, offenders, message=None):
        self.offenders = list(offenders)
        super().__init__(
            message or f"segment sets are misaligned; offenders: {self.offenders}"
        )


class CacheMissError(DataError):
    """A content-addressed embedding lookup missed."""

    def __init__(self, digest):
        self.digest = digest
        super().__init__(f"no stored embedding for digest {digest}")


class CheckpointError(DataError):
    """A model checkpoint is corrupt or has an incompatible version."""
