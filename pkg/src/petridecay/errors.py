"""Exception hierarchy shared across the package.

``ValidationError`` covers bad inputs (malformed files, inconsistent
configuration); the CLI maps it to exit code 2. Anything else escaping a
command is a runtime failure (exit code 1).
"""


class ValidationError(ValueError):
    pass


class LogParseError(ValidationError):
    """Malformed event-log source (XML syntax, CSV structure, timestamps)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValidationError):
    pass


class PnmlError(ValidationError):
    pass


class ReplayError(ValidationError):
    pass


class SampleFormatError(ValidationError):
    pass


class TrainingError(RuntimeError):
    pass
