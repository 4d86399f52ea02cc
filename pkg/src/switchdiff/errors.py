"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration and input problems exit
with 1, numerical failures with 2.
"""


class SwitchDiffError(Exception):
    pass


class DomainError(SwitchDiffError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InputError(SwitchDiffError, ValueError):
    """Malformed data: wrong shape, non-finite values, missing attributes."""


class ConfigError(SwitchDiffError, ValueError):
    """Invalid configuration. ``key_path`` names the offending entry."""

    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class NotFoundError(SwitchDiffError, LookupError):
    pass


class NumericalError(SwitchDiffError, ArithmeticError):
    """Non-finite values appeared during integration, training or fitting."""
