"""Stepwise reward engine for reasoning trajectories.

Segments a model's thinking region at transition words, scores each prefix by
completion accuracy, converts accuracy differences into per-step rewards with
lookahead decay, expands them into dense per-token traces alongside terminal
outcome/format rewards, and estimates advantages for policy-gradient RL. A
closed-loop simulator demonstrates that training against these rewards
suppresses ineffective reasoning steps.
"""

from .advantage import AdvantageParams, gae_advantages, reinforce_pp_advantages
from .analysis import (
    LengthStats,
    OverthinkStats,
    PassAtKReport,
    build_report,
    corpus_overthink,
    length_stats,
    overthink_stats,
    pass_at_k,
    pass_at_k_report,
)
from .config import EngineConfig, load_config, parse_config_file
from .errors import (
    BackendError,
    ConfigError,
    SegmentationError,
    StepRewardError,
    TrainingDiverged,
    TrajectoryError,
)
from .rewards import RewardParams, assemble_trace, check_format, step_rewards
from .scoring import (
    CandidateAnswer,
    GenerationParams,
    GeneratorBackend,
    HttpCompletionBackend,
    ScriptedMockBackend,
    extract_answer,
    extract_boxed,
    normalize_answer,
    score_subrollouts,
    verify_answer,
)
from .segmenter import (
    SegmentationConfig,
    build_subrollouts,
    full_thinking_query,
    segment,
)
from .simulator import (
    EngineHandle,
    Episode,
    StepTemplate,
    SyntheticTask,
    TemplatePolicy,
    evaluate_policy,
    mock_backend,
    rollout_episode,
    run_episode,
    run_training,
    scripted_generate,
    train_policy,
)
from .tokens import Tokenization, WhitespaceTokenizer
from .trajectory import (
    AccuracyProfile,
    AdvantageTrace,
    RewardTrace,
    SegmentationResult,
    SubRollout,
    Trajectory,
    dense_rewards,
    load_trajectories,
)

__version__ = "0.1.0"
