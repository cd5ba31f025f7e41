"""Exception hierarchy shared by all modules."""


class PolarPoseError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(PolarPoseError, ValueError):
    """An argument violates the operation's preconditions."""


class NoPoseFoundError(PolarPoseError, RuntimeError):
    """RANSAC could not find a hypothesis with enough support."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}


class DataError(PolarPoseError):
    """A file could not be loaded or saved."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        elif line is not None:
            loc = f"line {line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class MeshParseError(DataError):
    pass


class AnnotationError(DataError):
    pass
