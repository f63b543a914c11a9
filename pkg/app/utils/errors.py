"""Exceptions raised across the pipeline.

Every error carries a short default message so callers (and the CLI) can report
failures consistently without repeating the wording at each raise site.
"""


class EvsvError(Exception):
    """Base class for all pipeline errors"""

    default_message = "pipeline error"

    def __init__(self, message=None):
        super().__init__(message or self.default_message)


class UtteranceTooShortError(EvsvError):
    default_message = "utterance too short"


class NoVoicedFramesError(EvsvError):
    default_message = "no voiced frames"


class FeatureLengthMismatchError(EvsvError):
    default_message = "feature length mismatch"


class DimensionError(EvsvError):
    default_message = "dimension error"


class DivergenceError(EvsvError):
    default_message = "divergence detected"


class SpeakerCountError(EvsvError):
    default_message = "need ≥ 2 speakers"


class CorpusTooSmallError(EvsvError):
    default_message = "corpus too small for N×M batch"


class EmptyEnrollmentError(EvsvError):
    default_message = "empty enrollment"


class EmptyBatchError(EvsvError):
    default_message = "empty batch"


class EmptyDomainError(EvsvError):
    default_message = "empty training domain"


class DegenerateTrialSetError(EvsvError):
    default_message = "degenerate trial set"


class InsufficientUtterancesError(EvsvError):
    default_message = "insufficient utterances"


class SplitInfeasibleError(EvsvError):
    default_message = "split infeasible"


class NotEnoughNeutralError(EvsvError):
    default_message = "not enough neutral utterances for plan"


class MissingAudioError(EvsvError):
    default_message = "missing audio"


class DuplicateUtteranceError(EvsvError):
    default_message = "duplicate utterance id"


class ManifestError(EvsvError):
    default_message = "malformed manifest"


class InvalidEmotionError(EvsvError):
    default_message = "invalid emotion"


class ConfigError(EvsvError):
    default_message = "invalid configuration"


class MissingFeatureCacheError(EvsvError):
    default_message = "feature cache is missing; run extract-features first"


class CheckpointError(EvsvError):
    default_message = "corrupt checkpoint"


class StageError(EvsvError):
    """A CLI stage failed; the message is prefixed with the stage tag"""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
