"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes, so every failure mode raised by the
numerical core should be one of the classes below (or a subclass).
"""


class AlgebromechError(Exception):
    """Base class for all package errors."""


class InputError(AlgebromechError, ValueError):
    """Bad user input: dimension mismatch, invalid parameter, bad state."""


class ConstructionError(AlgebromechError, ValueError):
    """A model factory was given data violating its construction invariants."""


class RegularityError(AlgebromechError):
    """Degenerate Legendre transform: the fiber Hessian is (near-)singular."""


class SolveError(AlgebromechError):
    """An iterative solver (Newton) failed to converge."""


class MorphismError(AlgebromechError):
    """A morphism operation hit a singular fiber map or mismatched bundles."""


class ChartExitError(AlgebromechError):
    """A trajectory left the declared validity box of its coordinate chart."""

    def __init__(self, message, t=None, q=None):
        super().__init__(message)
        self.t = t
        self.q = q


class ConfigError(AlgebromechError, ValueError):
    """A run/compare configuration file failed to parse or validate."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
