"""Exception hierarchy.  CLI exit codes are keyed off these classes."""


class AttnTGCNError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ShapeError(AttnTGCNError, ValueError):
    kind = "shape-error"


class DomainError(AttnTGCNError, ValueError):
    kind = "domain-error"


class ValidationError(AttnTGCNError, ValueError):
    kind = "validation-error"


class CapacityError(ValidationError):
    kind = "capacity-error"


class ParseError(ValidationError):
    """Malformed input file; ``line`` is 1-based when known."""

    kind = "parse-error"

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class IncompatibleVersionError(ValidationError):
    kind = "version-error"


class NumericError(AttnTGCNError, ArithmeticError):
    kind = "numeric-error"
