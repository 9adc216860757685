"""Exception types shared across the toolkit."""


class GaugError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(GaugError):
    """Invalid argument, configuration, or input data."""


class ConditioningMismatch(GaugError):
    """Class label supplied to an unconditional generator, or missing from a
    class-conditional one, or a dimension mismatch at the generator boundary."""


class NumericalFailure(GaugError):
    """A numeric routine produced values outside its validity envelope
    (e.g. an eigenvalue far below zero in a PSD square root, or a
    non-finite training loss)."""


class StoreFormatError(GaugError):
    """Embedding-store file rejected at load time.

    ``code`` is one of the strings in :attr:`CODES` so callers can branch
    without string-matching the message.
    """

    BAD_MAGIC = "bad_magic"
    VERSION_MISMATCH = "version_mismatch"
    TRUNCATED = "truncated"
    CHECKSUM_FAILURE = "checksum_failure"

    CODES = (BAD_MAGIC, VERSION_MISMATCH, TRUNCATED, CHECKSUM_FAILURE)

    def __init__(self, code: str, message: str):
        assert code in self.CODES
        self.code = code
        super().__init__(f"{code}: {message}")
