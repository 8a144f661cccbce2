"""Exception hierarchy shared by every module."""


class TsvfError(Exception):
    """Base class for all package errors."""


class CapacityError(TsvfError):
    """Total Hilbert-space dimension exceeds the configured cap."""


class BasisError(TsvfError):
    """Operands live on incompatible bases or name unknown registers."""


class ContractViolation(TsvfError):
    """A numerical contract (unitarity, hermiticity, on-shell, ...) failed."""


class IncompatibleBoundaryError(TsvfError):
    """Pre- and post-selection leave no admissible weight."""


class NodeError(TsvfError):
    """Guiding-field density too small to define a velocity."""


class RangeError(TsvfError):
    """An index lies outside the valid range."""


class ConfigError(TsvfError):
    """Scenario configuration is invalid."""
