"""Exception types shared across the package."""


class PulseforgeError(Exception):
    """Base class for all package errors."""


class DomainError(PulseforgeError, ValueError):
    """An argument is outside the documented domain of an operation."""


class ParseError(PulseforgeError, ValueError):
    """A file could not be parsed; the message names the offending location."""


class ConfigurationError(PulseforgeError, ValueError):
    """Inconsistent or unknown configuration (rates, shapes, names, keys)."""


class DegenerateInputError(PulseforgeError, ValueError):
    """Input is structurally valid but carries no usable variation."""


class TrainingDiverged(PulseforgeError, RuntimeError):
    """Optimization produced a non-finite loss; message names epoch and batch."""
