"""Exception types shared across the engine."""


class ShapeError(ValueError):
    """Tensor dimensions do not satisfy an operation's contract."""


class ConfigError(ValueError):
    """Invalid engine or benchmark configuration."""


class CacheIntegrityError(RuntimeError):
    """KV-cache position bookkeeping was violated."""


class InvalidInputError(ValueError):
    """Conditioning inputs are malformed or inconsistent."""
