"""Exception types; the CLI maps each to an exit code."""


class StableInfError(Exception):
    exit_code = 3


class ConfigError(StableInfError, ValueError):
    """Bad configuration or usage."""

    exit_code = 1


class DataError(StableInfError, ValueError):
    """Malformed input data or a missing upstream artifact."""

    exit_code = 2
