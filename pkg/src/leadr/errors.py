"""Exception hierarchy shared by all modules.

Each family carries a process exit code so the CLI can map failures to
distinct statuses without inspecting messages.
"""


class LeadrError(Exception):
    exit_code = 1


class ConfigError(LeadrError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    pass


class DataError(LeadrError, ValueError):
    exit_code = 3


class LabelError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MetricError(DataError):
    pass


class NumericError(LeadrError, ArithmeticError):
    exit_code = 4


class TraceError(LeadrError, RuntimeError):
    """Backward pass called with a trace from an older parameter state."""
    exit_code = 4


class CheckpointError(LeadrError, OSError):
    exit_code = 5


class TaskError(LeadrError):
    """Wraps a per-task failure with the ordinal of the task in its stream."""

    def __init__(self, ordinal, cause):
        super().__init__(f"task {ordinal}: {cause}")
        self.ordinal = ordinal
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
