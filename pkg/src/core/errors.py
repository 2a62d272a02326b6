"""
Exception types shared across the package
"""


class ShapeError(ValueError):
    """Raised when tensor extents do not agree with an operation's contract"""


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf from its inputs"""


class GraphError(RuntimeError):
    """Raised for invalid backward requests (non-scalar loss, released graph)"""


class ConfigError(ValueError):
    """Raised for invalid run or model configuration"""


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be read back faithfully"""


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite"""
