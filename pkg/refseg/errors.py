# errors.py
"""Exception hierarchy shared by every refseg module."""


class RefSegError(Exception):
    """Base class for all errors raised by refseg."""


class ConfigurationError(RefSegError, ValueError):
    """A config value is missing, out of range, or inconsistent."""


class DatasetFormatError(RefSegError, ValueError):
    """A dataset, prediction or parse file could not be read."""


class InvalidParseError(RefSegError, ValueError):
    """A dependency parse has no single root, bad heads, or a cycle."""


class ArgumentError(RefSegError, ValueError):
    """An operation received arguments of the wrong shape or value."""


class DegeneracyError(RefSegError, ArithmeticError):
    """A normalisation hit a zero-norm vector."""


class MissingParseError(RefSegError, LookupError):
    """An expression has no dependency parse attached."""


class NonFiniteLossError(RefSegError, RuntimeError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
