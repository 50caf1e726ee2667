"""Exception types shared across the package."""


class DualinvError(Exception):
    """Base class for all package errors."""


class ParameterError(DualinvError, ValueError):
    """A configuration or argument value is out of its legal range."""


class ShapeError(DualinvError, ValueError):
    """Two arrays that must share a shape do not."""


class ContractError(DualinvError, RuntimeError):
    """A component was used outside its declared contract."""


class NumericError(DualinvError, ArithmeticError):
    """A computation produced a non-finite value."""


class TrainingError(NumericError):
    """Training diverged; carries the epoch at which it happened."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class InversionError(NumericError):
    """An inversion run blew up; carries timestep and round context."""

    def __init__(self, message, t=None, round_index=None):
        super().__init__(message)
        self.t = t
        self.round_index = round_index


class SamplingError(NumericError):
    """Deterministic sampling (reconstruction) blew up."""
