"""Layered configuration: defaults, then config file, then CLI flags.

The file format is flat ``key = value`` pairs with dotted namespaces
(``reward.gamma = 0.7``). Values are parsed as JSON when possible (numbers,
booleans, quoted strings, lists) and taken verbatim otherwise. Unknown keys
are rejected, naming the offender.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .advantage import AdvantageParams
from .errors import ConfigError
from .rewards import RewardParams
from .segmenter import SegmentationConfig
from .tokens import THINK_CLOSE, THINK_OPEN


@dataclass(frozen=True)
class ScoringSettings:
    n_candidates: int = 5
    temperature: float = 0.6
    top_p: float = 0.95
    max_new_tokens: int = 768
    backend: str = "mock"
    endpoint: str = ""
    retries: int = 3
    initial_backoff: float = 1.0
    timeout: float = 60.0
    mock_noise: float = 0.1

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("scoring.n_candidates must be >= 1")
        if self.backend not in ("mock", "http"):
            raise ValueError(f"scoring.backend must be 'mock' or 'http', got {self.backend!r}")


@dataclass(frozen=True)
class SimulatorSettings:
    noise: float = 0.1
    batch_size: int = 16
    learning_rate: float = 0.25
    max_episode_len: int = 12
    eval_episodes: int = 400
    logit_bound: float = 25.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("simulator.batch_size must be >= 1")
        if self.eval_episodes < 1:
            raise ValueError("simulator.eval_episodes must be >= 1")


@dataclass(frozen=True)
class EngineConfig:
    seed: int = 0
    think_open: str = THINK_OPEN
    think_close: str = THINK_CLOSE
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    advantage: AdvantageParams = field(default_factory=AdvantageParams)
    estimator: str = "rpp"
    scoring: ScoringSettings = field(default_factory=ScoringSettings)
    simulator: SimulatorSettings = field(default_factory=SimulatorSettings)
    tau: float = 0.99

    def to_flat(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "tokenizer.think_open": self.think_open,
            "tokenizer.think_close": self.think_close,
            "segmentation.special_tokens": list(self.segmentation.special_tokens),
            "segmentation.sentence_end_chars": list(self.segmentation.sentence_end_chars),
            "segmentation.c_min": self.segmentation.c_min,
            "segmentation.i_min": self.segmentation.i_min,
            "reward.gamma": self.reward.gamma,
            "reward.l_max": self.reward.l_max,
            "reward.epsilon": self.reward.epsilon,
            "reward.outcome_weight": self.reward.outcome_weight,
            "reward.format_weight": self.reward.format_weight,
            "advantage.estimator": self.estimator,
            "advantage.discount": self.advantage.discount,
            "advantage.gae_lambda": self.advantage.gae_lambda,
            "advantage.normalize": self.advantage.normalize,
            "scoring.n_candidates": self.scoring.n_candidates,
            "scoring.temperature": self.scoring.temperature,
            "scoring.top_p": self.scoring.top_p,
            "scoring.max_new_tokens": self.scoring.max_new_tokens,
            "scoring.backend": self.scoring.backend,
            "scoring.endpoint": self.scoring.endpoint,
            "scoring.retries": self.scoring.retries,
            "scoring.initial_backoff": self.scoring.initial_backoff,
            "scoring.timeout": self.scoring.timeout,
            "scoring.mock_noise": self.scoring.mock_noise,
            "simulator.noise": self.simulator.noise,
            "simulator.batch_size": self.simulator.batch_size,
            "simulator.learning_rate": self.simulator.learning_rate,
            "simulator.max_episode_len": self.simulator.max_episode_len,
            "simulator.eval_episodes": self.simulator.eval_episodes,
            "simulator.logit_bound": self.simulator.logit_bound,
            "analysis.tau": self.tau,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_flat(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "EngineConfig":
        known = cls().to_flat()
        for key in flat:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        merged = dict(known)
        merged.update(flat)

        def _typed(key: str, kind, caster=None):
            val = merged[key]
            if caster is not None:
                try:
                    val = caster(val)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"config key {key!r}: bad value {merged[key]!r}") from exc
            if not isinstance(val, kind):
                raise ConfigError(f"config key {key!r}: expected {kind}, got {type(val).__name__}")
            return val

        def _str_list(key: str) -> tuple:
            val = merged[key]
            if isinstance(val, str):
                val = [v for v in (s.strip() for s in val.split(",")) if v]
            if not isinstance(val, list) or not all(isinstance(v, str) for v in val):
                raise ConfigError(f"config key {key!r}: expected a list of strings")
            return tuple(val)

        end_chars = tuple(_decode_char(c) for c in _str_list("segmentation.sentence_end_chars"))
        for c in end_chars:
            if len(c) != 1:
                raise ConfigError(
                    f"config key 'segmentation.sentence_end_chars': entries must be single characters, got {c!r}"
                )
        try:
            segmentation = SegmentationConfig(
                special_tokens=_str_list("segmentation.special_tokens"),
                sentence_end_chars=end_chars,
                c_min=_typed("segmentation.c_min", int, int),
                i_min=_typed("segmentation.i_min", int, int),
            )
            reward = RewardParams(
                gamma=_typed("reward.gamma", float, float),
                l_max=_typed("reward.l_max", int, int),
                epsilon=_typed("reward.epsilon", float, float),
                outcome_weight=_typed("reward.outcome_weight", float, float),
                format_weight=_typed("reward.format_weight", float, float),
            )
            advantage = AdvantageParams(
                discount=_typed("advantage.discount", float, float),
                gae_lambda=_typed("advantage.gae_lambda", float, float),
                normalize=_typed("advantage.normalize", bool, _to_bool),
            )
            scoring = ScoringSettings(
                n_candidates=_typed("scoring.n_candidates", int, int),
                temperature=_typed("scoring.temperature", float, float),
                top_p=_typed("scoring.top_p", float, float),
                max_new_tokens=_typed("scoring.max_new_tokens", int, int),
                backend=_typed("scoring.backend", str),
                endpoint=_typed("scoring.endpoint", str),
                retries=_typed("scoring.retries", int, int),
                initial_backoff=_typed("scoring.initial_backoff", float, float),
                timeout=_typed("scoring.timeout", float, float),
                mock_noise=_typed("scoring.mock_noise", float, float),
            )
            simulator = SimulatorSettings(
                noise=_typed("simulator.noise", float, float),
                batch_size=_typed("simulator.batch_size", int, int),
                learning_rate=_typed("simulator.learning_rate", float, float),
                max_episode_len=_typed("simulator.max_episode_len", int, int),
                eval_episodes=_typed("simulator.eval_episodes", int, int),
                logit_bound=_typed("simulator.logit_bound", float, float),
            )
            estimator = _typed("advantage.estimator", str)
            if estimator not in ("gae", "rpp"):
                raise ConfigError(f"config key 'advantage.estimator': must be 'gae' or 'rpp', got {estimator!r}")
            return cls(
                seed=_typed("seed", int, int),
                think_open=_typed("tokenizer.think_open", str),
                think_close=_typed("tokenizer.think_close", str),
                segmentation=segmentation,
                reward=reward,
                advantage=advantage,
                estimator=estimator,
                scoring=scoring,
                simulator=simulator,
                tau=_typed("analysis.tau", float, float),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _to_bool(val) -> bool:
    if isinstance(val, bool):
        return val
    if isinstance(val, str):
        if val.lower() in ("true", "1", "yes"):
            return True
        if val.lower() in ("false", "0", "no"):
            return False
    raise ValueError(f"not a boolean: {val!r}")


def _decode_char(c: str) -> str:
    # allow "\n" escapes for terminator characters that cannot sit raw in the file
    if c == "\\n":
        return "\n"
    if c == "\\t":
        return "\t"
    return c


def parse_config_file(path: str | Path) -> Dict[str, Any]:
    """Flat dict from a key = value file; raises ConfigError on bad lines."""
    flat: Dict[str, Any] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key:
                raise ConfigError(f"{path}: line {lineno}: empty key")
            try:
                flat[key] = json.loads(value)
            except json.JSONDecodeError:
                flat[key] = value
    return flat


def load_config(
    config_path: Optional[str | Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> EngineConfig:
    """Merge defaults <- config file <- overrides into a validated config."""
    flat: Dict[str, Any] = {}
    if config_path is not None:
        flat.update(parse_config_file(config_path))
    if overrides:
        flat.update(overrides)
    return EngineConfig.from_flat(flat)
