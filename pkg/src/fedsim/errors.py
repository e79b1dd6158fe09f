"""Exception hierarchy shared by every fedsim module."""


class FedSimError(Exception):
    """Base class for all simulator errors."""


class DimensionError(FedSimError, ValueError):
    """Operands have mismatched lengths."""


class EmptyBufferError(FedSimError, ValueError):
    """An aggregation was asked to combine zero updates."""


class ConfigError(FedSimError, ValueError):
    """A configuration value is out of range or inconsistent."""


class DataError(FedSimError, ValueError):
    """A dataset is empty or otherwise unusable."""


class FormatError(FedSimError, ValueError):
    """An input file does not follow the expected binary layout."""


class ProtocolError(FedSimError, RuntimeError):
    """A client/server state machine rule was violated."""


class DegenerateWeightsError(FedSimError, ArithmeticError):
    """Every raw aggregation weight is zero, so they cannot be normalized."""


class NumericalError(FedSimError, FloatingPointError):
    """An operation produced NaN or infinite values."""
