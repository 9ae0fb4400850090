"""Exception types raised across the package."""


class TcpAlignError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TcpAlignError, ValueError):
    pass


class DegenerateInputError(TcpAlignError, ValueError):
    pass


class SingularityError(TcpAlignError, ArithmeticError):
    pass


class DegenerateConfigurationError(TcpAlignError, ValueError):
    """Point geometry does not constrain a unique rigid transform."""


class RegistrationError(TcpAlignError):
    """Iterative matching did not produce an acceptable solution."""

    def __init__(self, message: str, reason: str = "non-convergence"):
        super().__init__(message)
        self.reason = reason


class StaleCalibrationError(TcpAlignError):
    """The TCP orientation moved away from the one the calibration was made at."""


class MalformedPacketError(TcpAlignError, ValueError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"malformed packet ({reason}){': ' + detail if detail else ''}")
        self.reason = reason


class VisionStarvationError(TcpAlignError):
    """No accepted OOI measurement arrived within the allowed time."""


class PhaseOrderError(TcpAlignError):
    pass
