"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class SignRecError(Exception):
    exit_code = 1


class ConfigError(SignRecError, ValueError):
    """Bad parameters or usage."""

    exit_code = 2


class DataError(SignRecError, ValueError):
    """Malformed, empty or inconsistent data and file formats."""

    exit_code = 3


class NumericalError(SignRecError, ArithmeticError):
    """NaN/Inf values or solver failures."""

    exit_code = 4
