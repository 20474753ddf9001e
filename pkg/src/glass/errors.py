"""Exception types shared across the package."""


class GlassError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GlassError):
    """Operands have incompatible shapes."""


class ConfigError(GlassError):
    """A configuration value violates its contract."""


class SchemaError(GlassError):
    """An input file is missing a required column or field."""


class ParseError(GlassError):
    """An input file contains a cell or record that cannot be parsed."""


class NumericError(GlassError):
    """A non-finite value appeared where a finite one is required."""


class FormatError(GlassError):
    """A binary container is corrupt; message includes the byte offset."""


class AccumulationError(GlassError):
    """backward() was called twice on the same graph without a reset."""


class InsufficientDataError(GlassError):
    """Too few data points to compute the requested statistic or artifact."""
