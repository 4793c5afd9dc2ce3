"""Exception hierarchy shared across the engine."""


class GtflowError(Exception):
    """Base class for all engine errors."""

    code = "error"


class EmptyInputError(GtflowError):
    code = "empty-input"


class ConfigRangeError(GtflowError):
    code = "config-range"


class DimensionMismatchError(GtflowError):
    code = "dimension-mismatch"


class ZeroVectorError(GtflowError):
    code = "zero-vector"


class TransportError(GtflowError):
    """Retriable provider/agent transport failure.

    Carries the ids of the inputs that were in flight so callers can retry
    exactly the failed portion.
    """

    code = "transport"

    def __init__(self, message: str, failed_ids: list[str] | None = None):
        super().__init__(message)
        self.failed_ids = failed_ids or []


class InsufficientInputError(GtflowError):
    code = "insufficient-input"


class UndefinedMetricError(GtflowError):
    code = "undefined-metric"


class NoValidThresholdError(GtflowError):
    code = "no-valid-threshold"


class SchemaValidationError(GtflowError):
    """Structured-output validation failure; lists every violation found."""

    code = "schema-validation"

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class StageFailureError(GtflowError):
    """A coding stage produced malformed output even after the repair reprompt."""

    code = "stage-failure"

    def __init__(self, message: str, stage: str, raw_output: str):
        super().__init__(message)
        self.stage = stage
        self.raw_output = raw_output


class AuditWriteError(GtflowError):
    code = "audit-write"


class LineageGapError(GtflowError):
    code = "lineage-gap"

    def __init__(self, message: str, missing_link: str):
        super().__init__(message)
        self.missing_link = missing_link


class ReplayImpossibleError(GtflowError):
    code = "replay-impossible"

    def __init__(self, message: str, missing: list[str]):
        super().__init__(message)
        self.missing = missing


class NoOpRefinementError(GtflowError):
    code = "no-op-refinement"


class UndefinedTelemetryError(GtflowError):
    code = "undefined-telemetry"


class RunStateError(GtflowError):
    """Operation attempted against a run in the wrong state (e.g. unsealed)."""

    code = "run-state"


class NotFoundError(GtflowError):
    code = "not-found"
