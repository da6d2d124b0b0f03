"""Exception types shared across the engine."""


class StepRewardError(Exception):
    """Base class for engine errors."""


class TrajectoryError(StepRewardError):
    """Malformed trajectory input (bad JSONL line, missing key, duplicate id)."""


class SegmentationError(StepRewardError):
    """Segmentation cannot run (e.g. no thinking region)."""


class BackendError(StepRewardError):
    """Candidate generation failed (transport, contract, or batch size)."""


class ConfigError(StepRewardError):
    """Invalid or unknown configuration key/value."""


class TrainingDiverged(StepRewardError):
    """Policy logits exceeded the configured bound during training."""
