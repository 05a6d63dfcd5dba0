"""Exception types shared across the package.

CLI exit-code mapping: validation-type errors exit 2, resource errors exit 3.
"""


class HptrError(Exception):
    """Base class for package errors."""


class InvalidParameterError(HptrError, ValueError):
    pass


class SchemaError(HptrError, ValueError):
    """Mismatched outcome universes, malformed serialized objects."""


class ShapeError(HptrError, ValueError):
    pass


class InsufficientDataError(HptrError, ValueError):
    """Too few records for the requested trim."""


class DomainError(HptrError, ValueError):
    """Parameter outside the mathematical domain (non-PD scale, zero noise...)."""


class DegenerateDirectionError(HptrError, ValueError):
    """Zero robust variance along a named direction."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class DegenerateNoiseError(HptrError, ValueError):
    pass


class DegenerateDataError(HptrError, ValueError):
    pass


class DegenerateDesignError(HptrError, ValueError):
    """Rank-deficient design matrix; minimum-norm fallback was used."""


class EmptySupportError(HptrError, RuntimeError):
    """No candidate grid point survives the score threshold."""


class ResolutionError(HptrError, RuntimeError):
    """Candidate grid too coarse for the requested check."""


class ResourceError(HptrError, RuntimeError):
    """Enumeration budget exceeded; carries the partial result if any."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ParseError(HptrError, ValueError):
    """Malformed input file; line number in the message when known."""


class IoError(HptrError, OSError):
    pass
