"""Exception taxonomy shared across the package."""


class AisfError(Exception):
    """Base class for all package errors."""


class DimensionError(AisfError):
    """Tensor shapes incompatible with an operation."""


class ContractError(AisfError):
    """An API precondition was violated (wrong call pattern, missing grads)."""


class ConfigError(AisfError):
    """Invalid run configuration value or combination."""


class InputError(AisfError):
    """Invalid runtime input (degenerate box, non-binary mask, ...)."""


class FormatError(AisfError):
    """Malformed serialized payload (RLE counts, checkpoint bytes)."""


class ParseError(AisfError):
    """Unparseable external file (annotation JSON, config file, images)."""


class DataError(AisfError):
    """Dataset content violates a documented invariant."""
