"""Exception taxonomy shared across the pipeline stages."""

from __future__ import annotations


class VlngenError(Exception):
    """Base class for all pipeline errors."""


class PreconditionViolated(VlngenError):
    """An operation was called on data in the wrong state."""


class InvalidTrajectory(VlngenError, ValueError):
    """A trajectory violates a structural invariant."""


class NoValidTrajectory(VlngenError):
    """No trajectory satisfying the sampling constraints exists."""


class LabelerUnavailable(VlngenError):
    """The node-labeling client failed after retries."""


class ActionClientUnavailable(VlngenError):
    """The action-grounding client failed after retries."""


class EmptyInstruction(VlngenError):
    """An empty or whitespace-only instruction was supplied."""


class ExtractionFailure(VlngenError):
    """No (room, action) pair could be extracted from a non-empty instruction."""


class NonConvergent(VlngenError):
    """Text normalization did not reach a fixed point within the pass budget."""


class BackendError(VlngenError):
    """Base class for completion-backend failures; carries the attempt count."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class BackendTimeout(BackendError):
    pass


class BackendRejected(BackendError):
    pass


class RetriesExhausted(BackendError):
    pass


class PipelineError(VlngenError):
    """A stage failed for operational reasons (distinct from a Rejected data outcome)."""

    def __init__(self, message: str, stage: str = ""):
        super().__init__(message)
        self.stage = stage


class ConfigError(VlngenError):
    pass


class SchemaMismatch(VlngenError):
    """A dataset file does not match the expected schema."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class RejectedPairIncluded(VlngenError):
    """A non-verified pair was passed to an export that accepts verified pairs only."""


class FeatureProviderUnavailable(VlngenError):
    pass


class DegenerateTrajectory(VlngenError):
    """No non-identity permutation changes the node block sequence."""


class InsufficientDistractors(VlngenError):
    """The perturbation pool cannot yield the requested number of distinct distractors."""
