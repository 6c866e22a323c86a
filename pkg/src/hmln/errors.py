"""Exception types shared across the package."""


class HmlnError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HmlnError):
    """Invalid input: bad field value, malformed file, broken contract."""


class GuardError(HmlnError):
    """A built-in size guard refused the operation (e.g. enumeration or
    exact-solver limits). The message names the guard and the way out."""
