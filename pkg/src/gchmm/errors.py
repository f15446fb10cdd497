"""Exception types shared across the package."""


class GchmmError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(GchmmError, ValueError):
    """Malformed input file content."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DomainError(GchmmError, ValueError):
    """Value outside the admissible domain (bad index, shape or range)."""


class ConflictError(GchmmError, ValueError):
    """Two inputs disagree, e.g. a duplicated symptom cell."""


class IntegrityError(GchmmError, ValueError):
    """Internal consistency violated, e.g. an infection source off a 0->1 cell."""


class NumericalError(GchmmError, ArithmeticError):
    """Non-finite value or overflow during inference."""
