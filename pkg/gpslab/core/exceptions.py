"""
Custom Exception Classes for gpslab
Provides structured errors with error codes and CLI exit codes
"""
from typing import Optional, Dict, Any


class GPSLabError(Exception):
    """Base exception class for gpslab errors"""

    def __init__(
        self,
        message: str,
        error_code: str,
        exit_code: int = 1,
        details: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.error_code = error_code
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for summaries and JSON logs"""
        response = {
            "error": True,
            "error_code": self.error_code,
            "message": self.message,
        }
        if self.details:
            response["details"] = self.details
        return response


# =============================================================================
# Input Exceptions (exit code 2)
# =============================================================================

class InputError(GPSLabError):
    """Base error for bad configurations, arguments and files"""

    def __init__(
        self,
        message: str = "Invalid input",
        error_code: str = "INPUT_ERROR",
        details: Optional[Dict[str, Any]] = None
    ):
        super().__init__(
            message=message,
            error_code=error_code,
            exit_code=2,
            details=details
        )


class ConfigurationError(InputError):
    """Run configuration is malformed or has unknown keys"""

    def __init__(self, message: str = "Invalid run configuration", offenders: Optional[list] = None):
        super().__init__(
            message=message,
            error_code="CONFIG_ERROR",
            details={"offenders": offenders} if offenders else None
        )


class InvalidArgumentError(InputError):
    """Argument violates an operation's precondition"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(
            message=message,
            error_code="INVALID_ARGUMENT",
            details={"field": field} if field else None
        )


class UnsupportedOperationError(InputError):
    """Operation is not defined for this model or mode"""

    def __init__(self, message: str, mode: Optional[str] = None):
        super().__init__(
            message=message,
            error_code="UNSUPPORTED_OPERATION",
            details={"mode": mode} if mode else None
        )


class FormatError(InputError):
    """File content does not follow its format (FCIDUMP, IDX, model containers)"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        details: Dict[str, Any] = {}
        if path is not None:
            details["path"] = str(path)
        if line is not None:
            details["line"] = line
        super().__init__(
            message=f"{message} (line {line})" if line is not None else message,
            error_code="FORMAT_ERROR",
            details=details
        )


# =============================================================================
# Numerical Exceptions (exit code 3)
# =============================================================================

class NumericalError(GPSLabError):
    """Base numerical failure"""

    def __init__(
        self,
        message: str = "Numerical failure",
        error_code: str = "NUMERICAL_ERROR",
        details: Optional[Dict[str, Any]] = None
    ):
        super().__init__(
            message=message,
            error_code=error_code,
            exit_code=3,
            details=details
        )


class IllConditionedError(NumericalError):
    """Linear system stays singular after jitter escalation"""

    def __init__(self, message: str = "Linear system is ill-conditioned", condition: Optional[float] = None):
        super().__init__(
            message=message,
            error_code="ILL_CONDITIONED",
            details={"condition": condition} if condition is not None else None
        )


class NonConvergenceError(NumericalError):
    """Iterative solver did not reach its tolerance"""

    def __init__(self, message: str, iterations: Optional[int] = None, residual: Optional[float] = None):
        details: Dict[str, Any] = {}
        if iterations is not None:
            details["iterations"] = iterations
        if residual is not None:
            details["residual"] = residual
        super().__init__(message=message, error_code="NON_CONVERGENCE", details=details)


class DimensionCapError(NumericalError):
    """Sector dimension exceeds the configured solver cap"""

    def __init__(self, dimension: int, cap: int):
        super().__init__(
            message=f"Sector dimension {dimension} exceeds the cap {cap}",
            error_code="DIMENSION_CAP",
            details={"dimension": dimension, "cap": cap}
        )


class ZeroNormError(NumericalError):
    """A state or model has vanishing norm on the compared basis"""

    def __init__(self, message: str = "State has zero norm"):
        super().__init__(message=message, error_code="ZERO_NORM")


class NumericalDomainError(NumericalError):
    """Quantity is undefined, e.g. a log-derivative at a zero amplitude"""

    def __init__(self, message: str):
        super().__init__(message=message, error_code="NUMERICAL_DOMAIN")


class InsufficientSamplesError(NumericalError):
    """Too few samples for a Monte Carlo estimator"""

    def __init__(self, n_samples: int, required: int):
        super().__init__(
            message=f"Got {n_samples} samples, need at least {required}",
            error_code="INSUFFICIENT_SAMPLES",
            details={"n_samples": n_samples, "required": required}
        )


class DegenerateTargetError(NumericalError):
    """All sampled target amplitudes vanish"""

    def __init__(self, message: str = "All sampled target amplitudes are zero"):
        super().__init__(message=message, error_code="DEGENERATE_TARGET")


class SamplerStartError(NumericalError):
    """No configuration with nonzero amplitude found to start a chain"""

    def __init__(self, tries: int):
        super().__init__(
            message=f"No nonzero-amplitude start configuration after {tries} tries",
            error_code="SAMPLER_START",
            details={"tries": tries}
        )
