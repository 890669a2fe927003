"""Exception types shared across the package."""


class MSDAError(Exception):
    """Base class for all package errors."""

    kind = "error"


class DimensionError(MSDAError, ValueError):
    kind = "dimension"


class ConfigError(MSDAError, ValueError):
    kind = "config"


class ArgumentError(MSDAError, ValueError):
    kind = "argument"


class StateError(MSDAError, RuntimeError):
    kind = "state"


class ContractError(MSDAError, RuntimeError):
    kind = "contract"


class FormatError(MSDAError, ValueError):
    kind = "format"


class SchemaMismatchError(FormatError):
    kind = "schema"

    def __init__(self, missing, extra, message=None):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        if message is None:
            message = f"parameter schema mismatch: missing={self.missing} extra={self.extra}"
        super().__init__(message)
