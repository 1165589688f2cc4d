"""Exception types shared across the toolkit."""


class PurewaveError(Exception):
    """Base class for all toolkit errors."""


class MalformedWavError(PurewaveError):
    """WAV file is structurally broken (bad magic, truncated chunk, ...)."""


class UnsupportedWavError(PurewaveError):
    """WAV file is well-formed but not mono 16-bit PCM."""


class VocabularyError(PurewaveError):
    """Text contains characters outside the recognizer vocabulary."""


class UnrealizableTargetError(PurewaveError):
    """Label sequence cannot be aligned within the available frame count."""


class CorpusGateError(PurewaveError):
    """Speech-activity gate rejected more candidates than the retry budget allows."""


class TrainingDivergedError(PurewaveError):
    """Training produced a non-finite loss."""


class TrainingGateError(PurewaveError):
    """A trained model failed its quality gate."""


class CheckpointError(PurewaveError):
    """Checkpoint file is incompatible with the requested configuration."""


class DatasetError(PurewaveError):
    """Dataset cannot support the requested split or fit (single class, imbalance, too small)."""


class PipelineError(PurewaveError):
    """A pipeline stage is missing prerequisites or found inconsistent artifacts."""
