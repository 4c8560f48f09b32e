"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit 2,
numeric failures exit 3, file/format problems exit 4.
"""


class CircScatterError(Exception):
    """Base class for package errors."""


class ValidationError(CircScatterError, ValueError):
    """Bad argument, configuration, or layer specification."""


class DegenerateShapeError(ValidationError):
    """Radial boundary function is non-positive somewhere on the grid."""


class SamplingStuckError(CircScatterError, RuntimeError):
    """Rejection sampler exceeded the consecutive-rejection budget."""


class LayoutError(ValidationError):
    """Channel layout does not match the data or the request."""


class NumericError(CircScatterError, RuntimeError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class FormatError(CircScatterError, ValueError):
    """Malformed dataset, model, or registry file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
