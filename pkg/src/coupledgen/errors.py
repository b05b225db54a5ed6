"""Exception types shared across the package."""


class CoupledGenError(Exception):
    """Base class for all library errors."""


class InvalidDistributionError(CoupledGenError, ValueError):
    """A probability vector is malformed: negative, non-finite, or badly normalized."""


class ConfigurationError(CoupledGenError, ValueError):
    """Incompatible objects were combined, or an experiment config is invalid."""


class UnknownPromptError(CoupledGenError, KeyError):
    """A model or scorer was queried with a prompt it does not define."""


class InsufficientDataError(CoupledGenError, ValueError):
    """An estimator was called on an empty sample set."""


class DegenerateDataError(CoupledGenError, ValueError):
    """A statistic is undefined on the given data."""


class UnreachableTargetError(CoupledGenError, ValueError):
    """A target error level is not reached anywhere on an error curve."""
