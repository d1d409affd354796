"""Exception types shared across the package.

The CLI maps these onto exit codes, so keep the hierarchy flat and the
categories distinct: configuration/parameter problems, data problems,
and numeric contract violations.
"""


class ElaststError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(ElaststError, ValueError):
    """A caller-supplied parameter violates its contract."""


class ConfigError(ParameterError):
    """A run configuration (file or CLI override) is invalid."""


class DimensionError(ElaststError, ValueError):
    """Tensor/array shapes do not satisfy an operation's contract."""


class ContractError(ElaststError, RuntimeError):
    """An internal API contract was violated (e.g. non-scalar loss)."""


class IngestionError(ElaststError, ValueError):
    """A data file could not be ingested."""


class FormatError(IngestionError):
    """A data file has a structurally invalid layout."""


class SizingError(IngestionError):
    """A split or window request does not fit the available data."""


class MetricUndefinedError(ElaststError, ArithmeticError):
    """A metric's denominator is zero; the value is reported as undefined."""
