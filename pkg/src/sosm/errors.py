"""Exception types raised across the package."""


class SOSMError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SOSMError, ValueError):
    pass


class InvalidGeometryError(SOSMError, ValueError):
    pass


class MeshParseError(SOSMError, ValueError):
    """Malformed mesh file; carries the offending line number."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class MeshValidationError(SOSMError, ValueError):
    pass


class ConditioningError(SOSMError, ArithmeticError):
    """A local element system was numerically singular."""

    def __init__(self, message, condition=None):
        self.condition = condition
        super().__init__(message)


class DomainError(SOSMError, ValueError):
    """Input outside the domain of a thermodynamic relation."""


class NonConvergenceError(SOSMError, RuntimeError):
    """An iteration failed to reach its tolerance.

    ``history`` holds whatever per-iteration record the caller produced and
    ``residual`` the last measured residual, when one exists.
    """

    def __init__(self, message, history=None, residual=None):
        self.history = history
        self.residual = residual
        super().__init__(message)


class StateError(SOSMError, ValueError):
    """A coefficient state is unusable for assembly (non-finite or below floor)."""


class BoundaryDataError(SOSMError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class SolverError(SOSMError, RuntimeError):
    """Linear solve failed; ``diagnostics`` carries pivot information."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class ConfigError(SOSMError, ValueError):
    pass
