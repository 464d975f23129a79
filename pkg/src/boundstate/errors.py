"""Exception types shared across the package."""


class BoundStateError(Exception):
    """Base class for all library errors."""


class CertificationError(BoundStateError, ValueError):
    """A Gaussian sum could not be certified to the requested accuracy."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class GridMismatchError(BoundStateError, ValueError):
    pass


class SpaceTagError(BoundStateError, ValueError):
    pass


class BreakdownError(BoundStateError, RuntimeError):
    """Power iteration produced a (numerically) zero vector."""


class NotConvergedError(BoundStateError, RuntimeError):
    pass


class NewtonError(BoundStateError, RuntimeError):
    """Parameter Newton iteration left the admissible region or stalled."""


class ConfigError(BoundStateError, ValueError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path
