"""Exception types shared across the package."""


class PersistersError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(PersistersError, ValueError):
    """A model parameter violates its admissible range.

    ``field`` names the offending parameter so configuration front ends can
    point at it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class GridError(PersistersError, ValueError):
    pass


class AssemblyError(PersistersError, ValueError):
    pass


class NumericalError(PersistersError):
    """Base class for failures of a numerical procedure (exit code 3 in the CLI)."""


class IntegrationError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    """An iterative method hit its iteration cap.

    ``last_increment`` carries the size of the final update.
    """

    def __init__(self, message: str, last_increment: float = float("nan")):
        super().__init__(message)
        self.last_increment = last_increment


class BracketError(NumericalError, ValueError):
    pass


class ConfigError(PersistersError):
    """Invalid run configuration (exit code 2 in the CLI)."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line
