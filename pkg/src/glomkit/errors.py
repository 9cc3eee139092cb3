"""Exception hierarchy shared by all pipeline stages.

``exit_code`` is what the CLI returns when the error escapes: 1 for input
validation problems, 2 for I/O and external-detector failures.
"""


class GlomkitError(Exception):
    exit_code = 1


# --- validation errors (exit code 1) ---

class MalformedRle(GlomkitError):
    pass


class DegenerateBox(GlomkitError):
    pass


class DimensionMismatch(GlomkitError):
    pass


class SchemaViolation(GlomkitError):
    pass


class UnknownVersion(GlomkitError):
    pass


class OutOfBounds(GlomkitError):
    pass


class BadGeometry(GlomkitError):
    pass


class DomainError(GlomkitError):
    pass


class MalformedDetectionFile(GlomkitError):
    pass


class EmptyTissue(GlomkitError):
    pass


class NoEvaluableSlides(GlomkitError):
    pass


class InvariantViolation(GlomkitError):
    pass


# --- I/O and external-process errors (exit code 2) ---

class UnreadableFile(GlomkitError):
    exit_code = 2


class UnsupportedFormat(GlomkitError):
    exit_code = 2


class IoError(GlomkitError):
    exit_code = 2


class DetectorFailed(GlomkitError):
    exit_code = 2
