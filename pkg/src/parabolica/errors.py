"""Exception hierarchy shared by the library and the CLI exit codes."""


class ParabolicaError(Exception):
    """Base class for library errors."""


class DomainError(ParabolicaError, ValueError):
    """Argument outside the domain where a map or chart is defined."""


class InvalidTreeError(ParabolicaError):
    """Expression tree that does not denote a valid increasing diffeomorphism."""


class SecondDerivativeUnavailable(InvalidTreeError):
    pass


class ConvergenceError(ParabolicaError):
    """Iterative scheme failed to reach its tolerance.

    ``diagnostics`` carries whatever the failing scheme recorded (last delta,
    depth reached, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(ParabolicaError, ValueError):
    pass


class UnknownKeyError(InvalidTreeError, ConfigError):
    """Unrecognized key in a serialized tree; a config error under strict parsing."""
