"""Exception hierarchy shared by every module of the package."""


class MissDDIMError(Exception):
    """Base class for all package errors."""


class ParameterError(MissDDIMError, ValueError):
    """An argument is outside its documented domain."""


class ShapeError(ParameterError):
    """Array widths or lengths do not match."""


class ConfigurationError(MissDDIMError, ValueError):
    """A combination of settings cannot be run."""


class SchemaError(MissDDIMError, ValueError):
    """Tabular input does not fit the inferred or declared schema."""


class SchemaMismatchError(SchemaError):
    """Dataset and checkpoint were built from different schemas."""


class NumericError(MissDDIMError, ArithmeticError):
    """A computation produced NaN/Inf or left its valid numeric range."""


class StateError(MissDDIMError, RuntimeError):
    """An operation was called out of order."""


class EmptyTargetError(MissDDIMError):
    """A row has no pseudo-target entries and contributes nothing to the loss."""


class UndefinedMetricError(MissDDIMError, ValueError):
    """A metric has no cells to average over."""
