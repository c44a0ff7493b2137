"""Exception hierarchy shared by every stage of the pipeline."""


class FaceDynError(Exception):
    """Base class for all errors raised by facedyn."""


class MeshParseError(FaceDynError, ValueError):
    """A mesh file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class MeshFormatError(FaceDynError, ValueError):
    """Unsupported mesh format."""


class DegenerateCropError(FaceDynError, ValueError):
    """Cropping removed every vertex."""


class ConfigurationError(FaceDynError, ValueError):
    """Invalid configuration or parameter combination."""


class MissingAttributeError(FaceDynError, ValueError):
    """A required per-vertex attribute (e.g. color) is absent."""


class ShapeError(FaceDynError, ValueError):
    """Mismatched image sizes or sequence lengths."""


class DomainError(FaceDynError, ValueError):
    """Argument outside the domain of a function."""


class RankDeficiencyError(FaceDynError, ArithmeticError):
    """A normal system was singular and no regularizer was given."""


class SequenceTooShortError(FaceDynError, ValueError):
    """The sequence has too few frames for the operation."""


class WindowTooLargeError(FaceDynError, ValueError):
    """The temporal window exceeds the sequence length."""


class CoverageError(FaceDynError, ValueError):
    """Training data does not cover every class."""


class StageError(FaceDynError):
    """A pipeline stage failed.

    Carries the stage name and the (example, view, frame) coordinates that
    were being processed when the underlying error was raised.
    """

    def __init__(self, stage, cause, example=None, view=None, frame=None):
        self.stage = stage
        self.cause = cause
        self.example = example
        self.view = view
        self.frame = frame
        coords = ", ".join(
            f"{k}={v}" for k, v in (("n", example), ("view", view), ("t", frame)) if v is not None
        )
        loc = f" [{coords}]" if coords else ""
        super().__init__(f"stage '{stage}'{loc}: {type(cause).__name__}: {cause}")
