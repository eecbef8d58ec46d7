"""Exception hierarchy.

Everything the package raises on bad input derives from ``ValidationError``
so the CLI can map it to exit code 1 in one place.
"""


class OptigradeError(Exception):
    pass


class ValidationError(OptigradeError, ValueError):
    pass


class InvalidConfigError(ValidationError):
    pass


class ResolutionError(ValidationError):
    pass


class DegenerateApertureError(ValidationError):
    pass


class DegenerateKernelError(ValidationError):
    pass


class KernelSizeError(ValidationError):
    pass


class NotDegradationError(ValidationError):
    pass


class ImageTooSmallError(ValidationError):
    pass


class LabelParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyDatasetError(ValidationError):
    pass


class UndefinedMetricError(ValidationError):
    pass


class UsageError(ValidationError):
    pass
