"""Exception hierarchy shared by the engine, builders and labs."""


class ParityTransformerError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ParityTransformerError, ValueError):
    pass


class DimensionError(ParityTransformerError, ValueError):
    pass


class PrecisionError(ParityTransformerError, ArithmeticError):
    """A non-finite intermediate appeared; retry with an extended backend."""


class RangeError(ParityTransformerError, ValueError):
    pass


class BuildError(ParityTransformerError):
    pass


class CalibrationError(ParityTransformerError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NotBooleanError(ParityTransformerError):
    def __init__(self, message, witness=None, output=None):
        super().__init__(message)
        self.witness = witness
        self.output = output
