"""Exception hierarchy shared by every mixkrr module."""


class MixkrrError(Exception):
    """Base class for all errors raised by mixkrr."""


class InputError(MixkrrError, ValueError):
    """Bad argument value: out-of-domain point, empty list, bad lag, ..."""


class ConfigError(MixkrrError, ValueError):
    """Parameter combination outside the range the method is defined for."""


class NumericError(MixkrrError, ArithmeticError):
    """A linear solve or reduction produced non-finite values."""


class ParseError(MixkrrError, ValueError):
    """Malformed file on disk."""

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
