"""Exception types shared across the package."""


class MildSDEError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MildSDEError, ValueError):
    """Invalid construction parameters or run configuration."""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class DomainError(MildSDEError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ShapeError(MildSDEError, ValueError):
    """Array or ensemble dimensions do not match."""


class HorizonError(MildSDEError, IndexError):
    """A requested time lies outside the simulated (or stored) horizon."""


class DivergenceError(MildSDEError, ArithmeticError):
    """Non-finite state encountered during time stepping."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")
