# modules/errors.py

class IrregularityError(Exception):
    """Base class for all errors raised by the pipeline. Carries a process exit code."""
    exit_code = 1


class DatasetError(IrregularityError):
    """Malformed dataset file or protocol violation (e.g. irregular image in the train split)."""
    exit_code = 2


class ConfigError(IrregularityError):
    exit_code = 3


class DetectorError(IrregularityError):
    """Missing features, empty bags or an unusable detector file."""
    exit_code = 4


class GramFactorizationError(IrregularityError):
    """Cholesky factorization failed even after jitter escalation."""
    exit_code = 5

    def __init__(self, message, jitter=None):
        super().__init__(message)
        self.jitter = jitter


class EvaluationError(IrregularityError):
    exit_code = 6


class StageError(IrregularityError):
    """Wraps a failure inside one pipeline stage with the stage name."""
    exit_code = 7

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        # Keep the specific exit code of the underlying error when there is one.
        if isinstance(cause, IrregularityError):
            self.exit_code = cause.exit_code
