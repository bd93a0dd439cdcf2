"""Exception types raised across the simulator."""


class FedFSError(Exception):
    """Base class for all simulator errors."""


class DimensionError(FedFSError, ValueError):
    pass


class EmptyInputError(FedFSError, ValueError):
    pass


class NumericError(FedFSError, ArithmeticError):
    """Raised when a loss or gradient stops being finite."""


class ConfigError(FedFSError, ValueError):
    pass


class FormatError(FedFSError, ValueError):
    pass


class ConsistencyError(FedFSError, ValueError):
    pass


class TruncatedFileError(FedFSError, OSError):
    pass


class DegeneracyError(FedFSError, ValueError):
    pass
