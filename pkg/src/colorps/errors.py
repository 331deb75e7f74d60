"""Exception hierarchy shared across the toolkit."""


class ColorPSError(Exception):
    """Base class for all toolkit errors."""


class DomainError(ColorPSError, ValueError):
    """An input lies outside an operation's stated domain (e.g. z <= 0)."""


class DegenerateNormalError(DomainError):
    """The pre-normalization normal vector has zero length."""


class DegenerateDirectionError(DomainError):
    """Light and surface point coincide, or the half vector is undefined."""


class TraceError(ColorPSError, ArithmeticError):
    """A differentiation trace produced a non-finite intermediate value."""

    def __init__(self, op_name, message=""):
        self.op_name = op_name
        super().__init__(message or f"non-finite value produced by primitive '{op_name}'")


class OptimizerError(ColorPSError, RuntimeError):
    """Parameters left the finite domain during optimization."""


class DivergenceError(ColorPSError, RuntimeError):
    """Optimization diverged (loss became non-finite)."""

    def __init__(self, message, iteration=None, snapshot_dir=None):
        self.iteration = iteration
        self.snapshot_dir = snapshot_dir
        super().__init__(message)


class ConfigError(ColorPSError, ValueError):
    """A run configuration failed validation."""


class DataError(ColorPSError, ValueError):
    """Input data (images, datasets, rigs) is malformed or inconsistent."""


class ParseError(DataError):
    """A file could not be parsed; carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
