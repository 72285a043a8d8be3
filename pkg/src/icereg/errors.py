"""Exception types shared across the package."""


class IceregError(Exception):
    """Base class for all library errors."""


class DimensionError(IceregError):
    """Tensor or image shapes are incompatible with an operation."""


class ContractError(IceregError):
    """An argument violates a documented precondition."""


class NumericsError(IceregError):
    """A computation produced NaN or Inf."""


class ConfigurationError(IceregError):
    """An architecture / scene / training configuration is invalid."""


class EmptyInputError(IceregError):
    """An operation that requires a non-empty input received an empty one."""


class TrainingError(IceregError):
    """Training aborted (non-finite loss or gradient)."""
