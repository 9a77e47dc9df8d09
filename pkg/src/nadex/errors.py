"""Exception types shared across the package.

The CLI maps these onto exit codes, so keep the hierarchy flat and the
messages single-line.
"""


class NadexError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(NadexError):
    """Tensor extents are incompatible for the requested operation."""


class ConfigurationError(NadexError):
    """A hyperparameter or config value is outside its valid range."""


class DomainError(NadexError):
    """An input value is outside the mathematical domain of an operation."""


class ContractError(NadexError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class ParseError(NadexError):
    """A data file line could not be parsed; message carries the line number."""


class ValidationError(NadexError):
    """Parsed data violates an invariant (negative ids, bad splits, ...)."""


class UnknownIdError(NadexError):
    """An entity/relation id falls outside the vocabulary."""


class CheckpointFormatError(NadexError):
    """Checkpoint bytes are malformed or carry an unsupported version."""


class CheckpointVersionError(CheckpointFormatError):
    """Checkpoint format version is not the one this build writes."""


class NumericsError(NadexError):
    """NaN or Inf appeared where the pipeline requires finite values."""
