"""Exception types raised across the package."""


class MeasurementError(ValueError):
    """Base class for invalid states, operators and measurement requests."""


class InvalidStateError(MeasurementError):
    pass


class InvalidOperatorError(MeasurementError):
    """Operator K with K^dagger K not bounded by the identity."""


class DegenerateBranchError(MeasurementError):
    """A forced outcome has zero probability."""


class SingularWeakValueError(MeasurementError):
    pass


class ProcessReconstructionError(MeasurementError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class CalibrationError(ValueError):
    """Target set that the readout model cannot reach."""

    def __init__(self, message: str, constraint: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
