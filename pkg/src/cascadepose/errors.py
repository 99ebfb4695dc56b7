"""Shared exception types."""


class DimensionError(ValueError):
    """Tensor/array shapes are incompatible for the requested operation."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


class ContractError(ValueError):
    """A caller violated an operation precondition."""


class ConfigError(ValueError):
    """Invalid model or run configuration."""
