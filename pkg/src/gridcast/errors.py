"""Exception types shared across the package."""


class GridcastError(Exception):
    """Base class for all structured errors raised by this package."""


class ShapeMismatchError(GridcastError):
    """Operands have incompatible or invalid shapes."""


class ConfigError(GridcastError):
    """A configuration value or key is invalid."""


class SimulationError(GridcastError):
    """The world simulator could not satisfy its constraints."""


class NanGradientError(GridcastError):
    """An optimizer step saw a non-finite gradient and was aborted."""


class DataFormatError(GridcastError):
    """A serialized stream violates its format.

    ``offset`` is the absolute byte offset (or 1-based row number for text
    formats) at which the violation was detected, when known.
    """

    def __init__(self, message, offset=None, source=None):
        self.offset = offset
        self.source = source
        detail = message
        if offset is not None:
            detail += f" (offset {offset})"
        if source is not None:
            detail += f" [{source}]"
        super().__init__(detail)


class TrainingDivergedError(GridcastError):
    """Training hit a non-finite loss; carries the report up to the last good epoch."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)
