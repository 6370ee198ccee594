"""Exception types shared across the package."""


class DropGraphError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DropGraphError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(DropGraphError, ValueError):
    """A documented precondition of an operation was violated."""


class ConfigError(DropGraphError, ValueError):
    """A configuration value is missing, malformed, or out of range."""
