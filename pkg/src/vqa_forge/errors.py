"""Exception hierarchy shared by every module."""


class VQAForgeError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(VQAForgeError, ValueError):
    pass


class BoundsError(VQAForgeError, IndexError):
    pass


class ParameterError(VQAForgeError, ValueError):
    pass


class StateError(VQAForgeError, RuntimeError):
    pass


class DivergenceError(VQAForgeError, ArithmeticError):
    """Non-finite loss or gradient. ``epoch``/``batch`` locate it when known."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ParseError(VQAForgeError, ValueError):
    pass


class FormatError(VQAForgeError, ValueError):
    pass


class ConsistencyError(VQAForgeError, ValueError):
    pass


class CompatibilityError(VQAForgeError, ValueError):
    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = list(fields)


class ConfigError(VQAForgeError, ValueError):
    pass


class NotFoundError(VQAForgeError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DegenerateBatchError(ParameterError):
    """Train-mode batch normalization over fewer than two samples."""
