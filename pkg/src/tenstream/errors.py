"""Exception types shared across the framework.

Every error raised by tenstream derives from StreamError so callers can
catch the whole family with one clause.  Names follow the condition they
report, not the module that raises them.
"""

from __future__ import annotations


class StreamError(Exception):
    """Base class for all tenstream errors."""


# --- stream spec grammar ---------------------------------------------------

class SpecSyntaxError(StreamError):
    """Spec string does not follow the canonical grammar."""


class RangeError(StreamError):
    """A numeric field is outside its permitted range."""


class ArityError(StreamError):
    """Counted fields disagree (e.g. declared tensor count vs. entries)."""


# --- graph construction ----------------------------------------------------

class DuplicateName(StreamError):
    pass


class UnknownKind(StreamError):
    pass


class BadProperty(StreamError):
    pass


class IncompatibleSpecs(StreamError):
    pass


class PadOccupied(StreamError):
    pass


class DirectionError(StreamError):
    pass


class UnknownPad(StreamError):
    pass


class InvalidPipeline(StreamError):
    """Raised when a pipeline is built from a graph that failed validation."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(f"pipeline failed validation: {lines}")


# --- description parsing ---------------------------------------------------

class ParseError(StreamError):
    """Positioned error in a pipeline description.

    ``line`` and ``column`` are 1-based, ``offset`` is the 0-based character
    offset into the original text.  ``code`` is a short machine-readable
    classification (SyntaxError, UnknownElement, UnknownPad,
    PropertyTypeError, DuplicateName).
    """

    def __init__(self, message: str, *, line: int, column: int, offset: int,
                 code: str = "SyntaxError"):
        self.line = line
        self.column = column
        self.offset = offset
        self.code = code
        super().__init__(f"{line}:{column}: {code}: {message}")


# --- runtime ---------------------------------------------------------------

class StateChangeFailed(StreamError):
    def __init__(self, element: str, reason: str):
        self.element = element
        super().__init__(f"{element}: {reason}")


class StarvationTimeout(StreamError):
    pass


class PipelineFailure(StreamError):
    """A runtime error posted to the bus, wrapping the element that failed."""

    def __init__(self, element: str, cause: BaseException):
        self.element = element
        self.cause = cause
        super().__init__(f"{element}: {cause!r}")


# --- element behaviour -----------------------------------------------------

class LengthMismatch(StreamError):
    pass


class SpecMismatch(StreamError):
    pass


class ChainSpecError(StreamError):
    pass


class UnsupportedDtype(SpecSyntaxError):
    """A tensor element type name outside the supported set."""


class IndexOutOfRange(StreamError):
    pass


class DimensionMismatch(StreamError):
    pass


class TypeMismatch(StreamError):
    pass


class SizeSumMismatch(StreamError):
    pass


# --- filter plugins --------------------------------------------------------

class DuplicateFramework(StreamError):
    pass


class UnknownFramework(StreamError):
    pass


class PluginFailure(StreamError):
    pass


class SpecViolation(StreamError):
    pass


class FormatError(StreamError):
    pass


class DimOverflow(StreamError):
    pass


# --- io --------------------------------------------------------------------

class IoError(StreamError):
    pass
