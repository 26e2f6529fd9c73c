"""Exception hierarchy shared across the toolkit."""


class TrajevalError(Exception):
    """Base class for all domain errors raised by this package."""


class LogFormatError(TrajevalError):
    """A trajectory log record could not be parsed."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class TrajectoryValidationError(TrajevalError):
    """A trajectory violates a structural invariant."""

    def __init__(self, task_id: str, message: str):
        self.task_id = task_id
        super().__init__(f"task {task_id!r}: {message}")


class InputError(TrajevalError):
    """Caller-supplied data violates an operation's precondition."""


class MissingFallbackError(TrajevalError):
    """A task in the primary trajectory set has no fallback trajectory."""


class MixtureError(TrajevalError):
    """A training mixture cannot be assembled from the given pools."""


class EmbeddingTransportError(TrajevalError):
    """The embedding provider could not be reached for an uncached text."""


class ProviderContractError(TrajevalError):
    """A provider response violates its wire contract."""


class AggregationError(TrajevalError):
    """No scores remain to aggregate."""


class SynthFormatError(TrajevalError):
    """A generation-stage response violates its format contract."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


class DiversityExhaustionError(TrajevalError):
    """The objective diversity gate rejected every candidate."""

    def __init__(self, best_intent: str, best_similarity: float, attempts: int):
        self.best_intent = best_intent
        self.best_similarity = best_similarity
        self.attempts = attempts
        super().__init__(
            f"no sufficiently novel objective after {attempts} attempts; "
            f"best candidate {best_intent!r} had max similarity {best_similarity:.4f}"
        )


class GenerationRunError(TrajevalError):
    """A dataset-generation run failed at the run level."""
