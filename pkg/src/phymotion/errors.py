"""Exception hierarchy shared across the package."""


class PhyMotionError(Exception):
    """Base class for all library errors."""


class ShapeError(PhyMotionError, ValueError):
    pass


class ParameterError(PhyMotionError, ValueError):
    pass


class RangeError(PhyMotionError, ValueError):
    pass


class ContractError(PhyMotionError, RuntimeError):
    """A caller violated a precondition (too-short sequence, non-scalar loss, ...)."""


class DivergenceError(PhyMotionError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class LeakageError(PhyMotionError):
    """Evaluation was requested on data the model was trained on."""


class DataError(PhyMotionError):
    """Dataset or config on disk is missing, malformed or inconsistent."""
