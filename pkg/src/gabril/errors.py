"""Exception types shared across the package."""


class GabrilError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GabrilError):
    """A user-supplied configuration value is invalid (bad shape, bad flag)."""


class ContractViolation(GabrilError):
    """An internal precondition was violated by the caller."""


class NonFiniteError(ContractViolation):
    """A NaN or Inf entered the numeric core."""


class DatasetFormatError(GabrilError):
    """A persisted file failed to load. Subclasses identify the failure mode."""


class BadMagicError(DatasetFormatError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class ChecksumError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class UndefinedMetricError(GabrilError):
    """A metric is undefined for the given inputs (e.g. zero baseline score)."""
