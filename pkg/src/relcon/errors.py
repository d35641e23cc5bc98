"""Exception types shared across the library."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A call violated a documented precondition."""


class NumericError(ValueError):
    """Non-finite or otherwise unusable numeric input."""


class UnsupportedTapError(ValueError):
    """Requested feature tap does not exist for the architecture."""


class SplitError(ValueError):
    """Labeled/unlabeled split could not satisfy its constraints."""


class FormatError(ValueError):
    """Malformed binary or CSV payload.

    Carries the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """Invalid experiment configuration.

    Carries the config file line number and key, when known.
    """

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"key '{key}': "
        super().__init__(prefix + message)
        self.line = line
        self.key = key


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given labels (e.g. single-class AUC)."""
