"""Exception types shared across the package.

Every failure the pipeline can hit maps onto one of these, which in turn map
onto CLI exit codes (see cli.EXIT_CODES).
"""


class DuomaeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DuomaeError):
    """A config value is out of range, of the wrong type, or unknown."""


class EmptyInputError(DuomaeError):
    """An operation received an input with nothing to work on."""


class ContractError(DuomaeError):
    """An internal interface was called with mismatched shapes or missing state."""


class PipelineOrderError(DuomaeError):
    """A stage was invoked on a checkpoint from the wrong pipeline stage."""


class NumericalError(DuomaeError):
    """A training step produced NaN/Inf values and was aborted."""
