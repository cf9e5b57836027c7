"""Exception types shared across the package."""


class NightscanError(Exception):
    """Base class for all package errors."""


class ConfigError(NightscanError):
    """Invalid configuration value or incompatible option combination."""


class DimensionError(NightscanError):
    """Tensor shapes do not satisfy an operation's contract."""


class FormatError(NightscanError):
    """Malformed on-disk container (bad magic, truncation, size mismatch)."""


class ContractError(NightscanError):
    """An operation was called outside its stated preconditions."""


class NumericError(NightscanError):
    """A numeric contract violation (NaN/Inf where finite values are required)."""
