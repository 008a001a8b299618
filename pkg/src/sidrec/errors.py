"""Exception hierarchy. The CLI maps each class to a stable exit code."""


class SidrecError(Exception):
    exit_code = 1


class ConfigError(SidrecError):
    """Bad or unsupported configuration."""

    exit_code = 2


class DataError(SidrecError):
    """Unreadable input, malformed data or I/O failure."""

    exit_code = 3


class DataQualityError(DataError):
    pass


class UnsupportedConfigError(ConfigError):
    pass


class TrainingDiverged(SidrecError, FloatingPointError):
    pass
