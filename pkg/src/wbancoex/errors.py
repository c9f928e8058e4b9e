"""Exception types shared across the package."""


class WbanError(Exception):
    """Base class for all errors raised by wbancoex."""


class ParameterError(WbanError, ValueError):
    """An argument is out of its documented domain."""


class DegenerateInputError(WbanError, ValueError):
    """Input data carries no usable variation (e.g. a constant series)."""


class ValidationError(WbanError, ValueError):
    """A composite object (scenario, trace set, series file) is inconsistent."""


class TraceParseError(ValidationError):
    """A trace or series file could not be parsed.

    ``line`` is the 1-based line number where parsing failed, if known.
    """

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class UnsupportedFamilyError(WbanError, ValueError):
    """A distribution family is not supported by the requested operation."""


class UndefinedValueError(WbanError, ArithmeticError):
    """A quantity is mathematically undefined at the requested point."""


class ConfigError(WbanError):
    """Configuration file is missing keys or has invalid values."""
