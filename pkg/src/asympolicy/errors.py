"""Exception hierarchy. Each family maps to one CLI exit code."""


class AsymPolicyError(Exception):
    exit_code = 1


class ConfigError(AsymPolicyError):
    exit_code = 2


class DataError(AsymPolicyError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ValidationError(DataError):
    pass


class OverlapError(DataError):
    pass


class CapabilityError(DataError):
    """Raised when a metric needs inputs (e.g. ground truth) that are absent."""


class SolverError(AsymPolicyError):
    exit_code = 4


class ConvergenceError(SolverError):
    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace or []


class StageError(AsymPolicyError):
    """Wraps a failure inside a multi-stage pipeline with the stage label."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
