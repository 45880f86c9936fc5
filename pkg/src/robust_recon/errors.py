"""Exception types shared across the package.

The command line maps these onto distinct exit codes, so raising the right
class matters: ConfigError for bad configuration or parameters,
IntegrityError for unreadable or corrupted artifacts, NumericalError for
failures of the numerics themselves.
"""

__all__ = ["ConfigError", "IntegrityError", "NumericalError"]


class ConfigError(ValueError):
    pass


class IntegrityError(RuntimeError):
    pass


class NumericalError(RuntimeError):
    pass
