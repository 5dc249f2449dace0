"""Exception hierarchy shared by all modules."""


class PatchMVSError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(PatchMVSError, ValueError):
    pass


class BehindCameraError(PatchMVSError, ValueError):
    pass


class DegenerateHomographyError(PatchMVSError, ValueError):
    pass


class OutOfRangeError(PatchMVSError, ValueError):
    pass


class TriangulationError(PatchMVSError, ValueError):
    pass


class EmptyMetricsError(PatchMVSError, ValueError):
    pass


class ParseError(PatchMVSError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class InvalidSceneError(PatchMVSError, ValueError):
    pass


class InvalidOutputError(PatchMVSError, ValueError):
    pass


class InsufficientFramesError(PatchMVSError, ValueError):
    pass


class ConfigError(PatchMVSError, ValueError):
    pass


class StageError(PatchMVSError):
    """A module error re-raised with the frame and pipeline stage it happened in."""

    def __init__(self, frame, stage, cause):
        super().__init__(f"frame {frame}, stage {stage}: {cause}")
        self.frame = frame
        self.stage = stage
        self.cause = cause
