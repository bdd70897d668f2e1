"""Exception hierarchy shared by every zoomloc module."""


class ZoomlocError(Exception):
    """Base class for all package errors."""


class OutOfAOI(ZoomlocError, ValueError):
    pass


class InvalidAction(ZoomlocError, ValueError):
    pass


class EmptyEvalSet(ZoomlocError, ValueError):
    pass


class InvalidConfig(ZoomlocError, ValueError):
    pass


class ConfigError(InvalidConfig):
    pass


class ConfigMismatch(ZoomlocError, ValueError):
    pass


class NonFinite(ZoomlocError, FloatingPointError):
    pass


class ShapeMismatch(ZoomlocError, ValueError):
    pass


class TargetOutOfRange(ZoomlocError, IndexError):
    pass


class OddHeadDim(ZoomlocError, ValueError):
    pass


class BadImageShape(ZoomlocError, ValueError):
    pass


class OutOfRange(ZoomlocError, ValueError):
    pass


class RenderFailure(ZoomlocError, RuntimeError):
    pass


class EmptyDB(ZoomlocError, ValueError):
    pass


class DegenerateBatch(ZoomlocError, ValueError):
    pass


class EmptyImage(ZoomlocError, ValueError):
    pass


class ManifestParseError(ZoomlocError, ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CheckpointError(ZoomlocError, ValueError):
    pass
