# services/errors.py
# Fehlerklassen für alle Services. Die CLI bildet sie auf Exit-Codes ab.

from typing import Optional


class SykError(Exception):
    """Base class for every error raised by the services package."""


class ValidationError(SykError, ValueError):
    """Bad input parameters or malformed data."""


class FixtureError(ValidationError):
    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class UnfoldingError(ValidationError):
    """The polynomial staircase fit is not monotone inside the retained window."""


class ConfigMismatchError(ValidationError):
    """Persisted data was produced by a different configuration."""


class ResourceCapError(SykError):
    def __init__(self, message: str, required_bytes: Optional[int] = None):
        self.required_bytes = required_bytes
        if required_bytes is not None:
            message = f"{message} (estimated {required_bytes / 2**30:.2f} GiB)"
        super().__init__(message)


class SolverError(SykError, RuntimeError):
    """The dense eigensolver did not converge."""
