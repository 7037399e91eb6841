"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, data and
validation problems exit 2, anything unexpected exits 3.
"""


class FairRerankError(Exception):
    """Base class for all toolkit errors."""


class DataFormatError(FairRerankError):
    """A file could not be parsed. Carries the offending line number."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class ValidationError(FairRerankError):
    """An input violates a documented invariant or precondition."""


class UndefinedMetricError(FairRerankError):
    """A metric has no defined value for this input (e.g. empty group)."""


class ConfigError(FairRerankError):
    """An experiment configuration is malformed or inconsistent."""
