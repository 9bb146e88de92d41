"""Exception hierarchy shared across the package."""


class RubricRLError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RubricRLError):
    """Input data or arguments violate a documented invariant."""


class ParseError(RubricRLError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConfigError(RubricRLError):
    """A run configuration or template is unusable."""


class FixtureError(RubricRLError):
    """A scripted backend has no entry for the requested key."""


class TransportError(RubricRLError):
    """A remote endpoint could not be reached within the retry budget."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (attempts={attempts})")
        self.attempts = attempts


class ProtocolError(RubricRLError):
    """A remote endpoint answered with a non-retryable error status."""

    def __init__(self, message: str, status: int):
        super().__init__(f"{message} (status={status})")
        self.status = status


class TrainAborted(RubricRLError):
    """Training stopped early; a checkpoint was written if a path was configured."""

    def __init__(self, message: str, step: int, checkpoint_path: str | None = None):
        super().__init__(message)
        self.step = step
        self.checkpoint_path = checkpoint_path
