"""Exception hierarchy shared by every module."""


class ErgoloopError(Exception):
    """Base class for all errors raised by ergoloop."""


class DimensionError(ErgoloopError, ValueError):
    pass


class ModelValidationError(ErgoloopError, ValueError):
    pass


class SignalRangeError(ErgoloopError, ValueError):
    """A binary agent received a broadcast signal outside [0, 1]."""

    def __init__(self, pi, k=None):
        self.pi = pi
        self.k = k
        where = "" if k is None else f" at step k={k}"
        super().__init__(f"broadcast signal pi={pi!r} outside [0, 1]{where}")


class BudgetError(ErgoloopError, RuntimeError):
    pass


class UnsupportedStructureError(ErgoloopError, TypeError):
    pass


class InputExhaustedError(ErgoloopError, IndexError):
    pass


class RepresentationError(ErgoloopError, ValueError):
    """Data cannot be represented exactly as a rational number."""


class ConfigError(ErgoloopError, ValueError):
    pass
