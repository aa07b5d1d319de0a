"""Exception hierarchy shared by the pipeline stages."""

from __future__ import annotations


class FlowPromptError(Exception):
    """Base class for every error raised by this package."""


# dataset
class DatasetError(FlowPromptError):
    pass


class MissingColumn(DatasetError):
    pass


class BadValue(DatasetError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class EmptyFile(DatasetError):
    pass


class InsufficientClass(DatasetError):
    pass


class OddN(DatasetError):
    pass


class DevTooLarge(DatasetError):
    pass


# flags / baseline
class EmptyTrain(FlowPromptError):
    pass


class DimensionMismatch(FlowPromptError):
    pass


class SingleClass(FlowPromptError):
    pass


class NonFiniteLoss(FlowPromptError):
    pass


# render / prompt
class BudgetExceeded(FlowPromptError):
    pass


class ExemplarMismatch(FlowPromptError):
    pass


# grammar
class VerdictError(FlowPromptError):
    """Raw model output is not in the verdict grammar's language."""


class ExtraTokens(VerdictError):
    pass


class Malformed(VerdictError):
    pass


class OutOfRange(VerdictError):
    pass


class MissingKey(VerdictError):
    pass


# inference
class InferenceError(FlowPromptError):
    retryable = False


class Timeout(InferenceError):
    retryable = True


class HttpError(InferenceError):
    def __init__(self, status: int, message: str = ""):
        # status 0: connection-level failure, no response received
        self.status = status
        self.retryable = status == 0 or status == 429 or status >= 500
        super().__init__(f"HTTP {status}" + (f": {message}" if message else ""))


class GrammarViolation(InferenceError):
    pass


# calibration / metrics
class NoPositives(FlowPromptError):
    pass


class LengthMismatch(FlowPromptError):
    pass


class Empty(FlowPromptError):
    pass


class BadCounts(FlowPromptError):
    pass


# bundle
class PipelineError(FlowPromptError):
    """A stage of ``cmd_run`` failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


class IncompleteBundle(FlowPromptError):
    pass
