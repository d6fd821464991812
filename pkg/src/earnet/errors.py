"""Exception hierarchy shared across the package."""


class EarnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EarnetError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(EarnetError):
    """A configuration value violates a documented constraint."""


class ContractError(EarnetError):
    """An API was called in a way its contract forbids (e.g. non-scalar loss)."""


class DataError(EarnetError):
    """An input image or dataset file could not be decoded or is malformed."""


class WeightsError(EarnetError):
    """A weight file is corrupt, truncated, or does not match the model."""


class DivergenceError(EarnetError):
    """Training produced a non-finite loss or gradient."""
