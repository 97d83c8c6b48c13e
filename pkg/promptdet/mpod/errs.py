"""exception types raised across the package; all derive from built-ins."""


class DimensionError(ValueError):
    """shapes of operands do not conform."""


class ConfigError(ValueError):
    """invalid configuration; `field` holds the dotted path when known."""
    def __init__(self, msg, field=None):
        if field:
            msg = f"{field}: {msg}"
        super().__init__(msg)
        self.field = field


class PrerequisiteError(FileNotFoundError):
    """a checkpoint, cache or dataset needed by a command is missing."""


class DatasetError(ValueError):
    """corrupt or incompatible dataset record."""


class CheckFailure(RuntimeError):
    """a numerical check exceeded its tolerance."""
