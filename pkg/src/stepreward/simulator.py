"""Closed-loop toy environment for exercising the whole reward engine.

The synthetic task is a running sum: start from a value and add a fixed
increment a required number of times. A scripted policy writes one sentence
per step, drawn from four templates: an effective step performs an addition,
a harmful step retracts one, an ineffective step rambles without touching the
sum, and a conclude step ends the thinking region. The scripted answerer
reads the task out of the prompt, counts additions minus retractions in
whatever thinking prefix it is given, and answers accordingly, which makes
prefix accuracy a direct function of how much real progress the prefix
contains. That closes the loop: segmentation finds the step starts, scoring
measures per-prefix accuracy, the reward rule converts accuracy differences
into per-step credit, and a policy-gradient update on the template logits
should learn to stop sampling the templates that earn nothing.

Episodes here are a few hundred tokens, so the segmentation spacing knobs are
scaled down from their production defaults; reward parameters are untouched.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .advantage import AdvantageParams, gae_advantages, reinforce_pp_advantages
from .errors import TrainingDiverged
from .rewards import RewardParams, assemble_trace, check_format, step_rewards
from .scoring import CandidateAnswer, ScriptedMockBackend, score_subrollouts, verify_answer
from .segmenter import SegmentationConfig, build_subrollouts, segment
from .tokens import WhitespaceTokenizer
from .trajectory import Trajectory, dense_rewards

TEMPLATE_KINDS = ("effective", "ineffective", "harmful", "conclude")

# signature substrings the scripted answerer counts; one per progress-bearing kind
EFFECTIVE_SIG = "brings the running total to"
HARMFUL_SIG = "drop it and fall back to"


@dataclass(frozen=True)
class StepTemplate:
    """One sentence pattern; placeholders are filled from the episode state."""

    kind: str
    text_pattern: str

    def __post_init__(self):
        if self.kind not in TEMPLATE_KINDS:
            raise ValueError(f"unknown template kind {self.kind!r}")

    def render(self, **fields) -> str:
        return self.text_pattern.format(**fields)


DEFAULT_TEMPLATES = (
    StepTemplate("effective", "So one more increment of {inc} brings the running total to {value}."),
    StepTemplate("ineffective", "Wait, the running tally deserves another careful recheck before moving on."),
    StepTemplate("harmful", "But the last increment looks unsafe, drop it and fall back to {value}."),
    StepTemplate("conclude", "The additions are finished and the final value is settled."),
)


@dataclass(frozen=True)
class SyntheticTask:
    """Running-sum task: target = start + increment * required_effective_steps."""

    start: int
    increment: int
    required_effective_steps: int
    noise: float = 0.1

    def __post_init__(self):
        if self.required_effective_steps < 1:
            raise ValueError("required_effective_steps must be >= 1")
        if not 0 <= self.noise < 0.5:
            raise ValueError("noise must be in [0, 0.5)")
        if self.increment < 1:
            raise ValueError("increment must be >= 1")

    @property
    def target(self) -> int:
        return self.start + self.increment * self.required_effective_steps


def task_prompt(task: SyntheticTask) -> str:
    return (
        f"Starting from {task.start}, add {task.increment} exactly "
        f"{task.required_effective_steps} times; the total after the required additions "
        f"is the answer. Reply with the boxed total."
    )


_TASK_PATTERN = re.compile(
    r"Starting from (-?\d+), add (\d+) exactly (\d+) times"
)


def parse_task(query: str, noise: float) -> Optional[SyntheticTask]:
    m = _TASK_PATTERN.search(query)
    if m is None:
        return None
    return SyntheticTask(int(m.group(1)), int(m.group(2)), int(m.group(3)), noise)


def _progress_count(prefix: str) -> int:
    return prefix.count(EFFECTIVE_SIG) - prefix.count(HARMFUL_SIG)


def _scripted_answer(prefix: str, task: SyntheticTask, rng: random.Random) -> CandidateAnswer:
    """Answer quality as a function of progress contained in the prefix.

    count >= m answers the target with probability 1 - noise; below m the
    answer is the partial sum, correct only with probability
    noise * clip(count / m, 0, 1).
    """
    count = _progress_count(prefix)
    m = task.required_effective_steps
    if count >= m:
        correct = rng.random() < 1.0 - task.noise
    else:
        correct = rng.random() < task.noise * min(max(count / m, 0.0), 1.0)
    if correct:
        value = task.target
    else:
        capped = min(max(count, 0), m)
        value = task.start + task.increment * capped
        if value == task.target:
            value = task.target + task.increment
    text = f"The additions give \\boxed{{{value}}}."
    return CandidateAnswer(text=text, extracted=str(value), correct=correct)


def scripted_generate(sub_prefix: str, task: SyntheticTask, rng_seed: int) -> CandidateAnswer:
    """One deterministic candidate for a thinking prefix under a task."""
    return _scripted_answer(sub_prefix, task, random.Random(rng_seed))


def mock_backend(noise: float = 0.1, seed: int = 0) -> ScriptedMockBackend:
    """Backend that recovers the task from the query and answers via the script.

    Queries that do not carry a synthetic task prompt get a fixed wrong
    answer, keeping the backend total and deterministic.
    """

    def script(query: str, rng: random.Random) -> str:
        task = parse_task(query, noise)
        if task is None:
            return "The additions give \\boxed{-999999}."
        return _scripted_answer(query, task, rng).text

    return ScriptedMockBackend(script, seed=seed)


# --- policy and episodes -----------------------------------------------------

@dataclass
class TemplatePolicy:
    """Position-independent categorical over the step templates."""

    logits: List[float] = field(default_factory=lambda: [0.0] * len(DEFAULT_TEMPLATES))
    learning_rate: float = 0.25
    max_episode_len: int = 12
    templates: Tuple[StepTemplate, ...] = DEFAULT_TEMPLATES

    def __post_init__(self):
        if len(self.logits) != len(self.templates):
            raise ValueError("one logit per template required")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.max_episode_len < 1:
            raise ValueError("max_episode_len must be >= 1")

    def probs(self) -> List[float]:
        peak = max(self.logits)
        ws = [math.exp(x - peak) for x in self.logits]
        z = sum(ws)
        return [w / z for w in ws]

    def sample(self, rng: random.Random) -> int:
        u = rng.random()
        acc = 0.0
        ps = self.probs()
        for i, p in enumerate(ps):
            acc += p
            if u < acc:
                return i
        return len(ps) - 1

    def copy(self) -> "TemplatePolicy":
        return replace(self, logits=list(self.logits))


@dataclass(frozen=True)
class Episode:
    """A rollout plus the bookkeeping the policy update needs."""

    trajectory: Trajectory
    template_ids: Tuple[int, ...]
    step_token_starts: Tuple[int, ...]


def _episode_seed(seed: int, index: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{seed}|{index}|{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def run_episode(
    policy: TemplatePolicy,
    task: SyntheticTask,
    rng_seed: int,
    episode_id: str = "",
    tokenizer: Optional[WhitespaceTokenizer] = None,
) -> Episode:
    rng = random.Random(rng_seed)
    tokenizer = tokenizer or WhitespaceTokenizer()
    template_ids: List[int] = []
    sentences: List[str] = []
    char_starts: List[int] = []
    value = task.start
    offset = 0
    for _ in range(policy.max_episode_len):
        tid = policy.sample(rng)
        template = policy.templates[tid]
        if template.kind == "effective":
            value += task.increment
        elif template.kind == "harmful":
            value -= task.increment
        text = template.render(inc=task.increment, value=value)
        template_ids.append(tid)
        char_starts.append(offset)
        sentences.append(text)
        offset += len(text) + 1
        if template.kind == "conclude":
            break
    thinking = " ".join(sentences)
    answer = _scripted_answer(thinking, task, random.Random(_episode_seed(rng_seed, 0, "final")))
    response = f"<think>{thinking}</think>\n{answer.text}"
    traj = Trajectory.build(
        episode_id or f"episode-{rng_seed}",
        task_prompt(task),
        response,
        str(task.target),
        tokenizer=tokenizer,
    )
    span_start = traj.think_span[0] if traj.think_span else 0
    think_char_base = traj.tokenization.starts[span_start] if traj.think_span else 0
    token_starts = tuple(
        traj.tokenization.token_index_at_char(think_char_base + c) for c in char_starts
    )
    return Episode(traj, tuple(template_ids), token_starts)


def rollout_episode(
    policy: TemplatePolicy,
    task: SyntheticTask,
    rng_seed: int,
    episode_id: str = "",
) -> Trajectory:
    """Sample one trajectory from the policy; wrapper over the full episode record."""
    return run_episode(policy, task, rng_seed, episode_id).trajectory


def uniform_task_sampler(
    noise: float = 0.1,
    m_choices: Sequence[int] = (2, 3),
    start_range: Tuple[int, int] = (1, 9),
    increment_range: Tuple[int, int] = (2, 9),
) -> Callable[[random.Random], SyntheticTask]:
    def sample(rng: random.Random) -> SyntheticTask:
        return SyntheticTask(
            start=rng.randint(*start_range),
            increment=rng.randint(*increment_range),
            required_effective_steps=rng.choice(list(m_choices)),
            noise=noise,
        )

    return sample


# --- training ----------------------------------------------------------------

SIMULATOR_SEGMENTATION = SegmentationConfig(c_min=0, i_min=1)


@dataclass(frozen=True)
class EngineHandle:
    """The pieces of the reward pipeline the trainer drives per episode."""

    segmentation: SegmentationConfig = SIMULATOR_SEGMENTATION
    reward: RewardParams = RewardParams()
    advantage: AdvantageParams = AdvantageParams()
    n_candidates: int = 5
    noise: float = 0.1


def episode_rewards(episode: Episode, handle: EngineHandle, backend: ScriptedMockBackend) -> List[float]:
    """Dense per-token rewards for one episode via the full pipeline."""
    traj = episode.trajectory
    seg = segment(traj, handle.segmentation)
    subs = build_subrollouts(traj, seg)
    profile = score_subrollouts(subs, traj, backend, handle.n_candidates)
    rewards = step_rewards(profile, handle.reward)
    trace = assemble_trace(
        traj,
        seg,
        rewards,
        outcome_correct=verify_answer(traj.response, traj.ground_truth),
        format_ok=check_format(traj),
        params=handle.reward,
    )
    return dense_rewards(trace)


def _episode_advantages(
    batch: List[List[float]],
    estimator: str,
    params: AdvantageParams,
) -> List[List[float]]:
    if estimator == "reinforce_pp":
        traces = reinforce_pp_advantages(batch, params)
        return [list(t.values) for t in traces]
    if estimator == "gae":
        return [list(gae_advantages(r, None, params).values) for r in batch]
    raise ValueError(f"unknown estimator {estimator!r}")


def train_policy(
    policy: TemplatePolicy,
    tasks: Callable[[random.Random], SyntheticTask],
    engine: EngineHandle,
    episodes: int,
    estimator: str = "reinforce_pp",
    seed: int = 0,
    batch_size: int = 16,
    logit_bound: float = 25.0,
    log: Optional[List[dict]] = None,
) -> TemplatePolicy:
    """Policy-gradient training against the engine's stepwise rewards.

    Episodes are processed in batches; each template decision is reinforced
    by the advantage at its step's first token. Raises TrainingDiverged with
    diagnostics when any logit leaves [-logit_bound, logit_bound].
    """
    policy = policy.copy()
    backend = mock_backend(noise=engine.noise, seed=seed)
    task_rng = random.Random(_episode_seed(seed, 0, "tasks"))
    n_templates = len(policy.templates)
    done = 0
    while done < episodes:
        b = min(batch_size, episodes - done)
        batch_eps: List[Episode] = []
        batch_rewards: List[List[float]] = []
        for i in range(done, done + b):
            task = tasks(task_rng)
            ep = run_episode(policy, task, _episode_seed(seed, i, "rollout"), episode_id=f"ep-{i:06d}")
            batch_eps.append(ep)
            batch_rewards.append(episode_rewards(ep, engine, backend))
        advantages = _episode_advantages(batch_rewards, estimator, engine.advantage)

        grad = [0.0] * n_templates
        probs = policy.probs()
        decisions = 0
        for ep, adv in zip(batch_eps, advantages):
            for tid, tok in zip(ep.template_ids, ep.step_token_starts):
                a = adv[tok]
                for t in range(n_templates):
                    grad[t] += a * ((1.0 if t == tid else 0.0) - probs[t])
                decisions += 1
        if decisions:
            scale = policy.learning_rate / decisions
            policy.logits = [x + scale * g for x, g in zip(policy.logits, grad)]
        if any(abs(x) > logit_bound for x in policy.logits):
            raise TrainingDiverged(
                f"logits {policy.logits} exceeded bound {logit_bound} after {done + b} episodes"
            )

        if log is not None:
            for i, ep in enumerate(batch_eps):
                counts = _kind_counts(ep, policy.templates)
                steps = len(ep.template_ids)
                log.append({
                    "episode": done + i,
                    "steps": steps,
                    "counts": counts,
                    "ineffective_fraction": counts["ineffective"] / steps if steps else 0.0,
                    "correct": int(verify_answer(ep.trajectory.response, ep.trajectory.ground_truth)),
                    "length_tokens": len(ep.trajectory.tokenization),
                    "probs": [round(p, 6) for p in probs],
                })
        done += b
    return policy


def _kind_counts(episode: Episode, templates: Sequence[StepTemplate]) -> Dict[str, int]:
    counts = {kind: 0 for kind in TEMPLATE_KINDS}
    for tid in episode.template_ids:
        counts[templates[tid].kind] += 1
    return counts


def evaluate_policy(
    policy: TemplatePolicy,
    tasks: Callable[[random.Random], SyntheticTask],
    episodes: int,
    seed: int = 0,
) -> dict:
    """Rollout-only evaluation: terminal accuracy and template usage."""
    task_rng = random.Random(_episode_seed(seed, 0, "eval-tasks"))
    totals = {kind: 0 for kind in TEMPLATE_KINDS}
    correct = 0
    steps_total = 0
    length_total = 0
    ineff_fracs = []
    for i in range(episodes):
        task = tasks(task_rng)
        ep = run_episode(policy, task, _episode_seed(seed, i, "eval"), episode_id=f"eval-{i:06d}")
        counts = _kind_counts(ep, policy.templates)
        for kind in TEMPLATE_KINDS:
            totals[kind] += counts[kind]
        steps = len(ep.template_ids)
        steps_total += steps
        length_total += len(ep.trajectory.tokenization)
        ineff_fracs.append(counts["ineffective"] / steps if steps else 0.0)
        correct += verify_answer(ep.trajectory.response, ep.trajectory.ground_truth)
    return {
        "episodes": episodes,
        "accuracy": correct / episodes if episodes else 0.0,
        "ineffective_fraction": math.fsum(ineff_fracs) / episodes if episodes else 0.0,
        "template_totals": totals,
        "mean_steps": steps_total / episodes if episodes else 0.0,
        "mean_length_tokens": length_total / episodes if episodes else 0.0,
    }


def run_training(
    seed: int,
    episodes: int,
    estimator: str = "reinforce_pp",
    engine: EngineHandle = EngineHandle(),
    policy: Optional[TemplatePolicy] = None,
    eval_episodes: int = 400,
    batch_size: int = 16,
    logit_bound: float = 25.0,
) -> Tuple[TemplatePolicy, List[dict], dict]:
    """Evaluate, train, evaluate; returns (policy, per-episode log, summary)."""
    policy = (policy or TemplatePolicy()).copy()
    sampler = uniform_task_sampler(noise=engine.noise)
    before = evaluate_policy(policy, sampler, eval_episodes, seed=_episode_seed(seed, 0, "before"))
    log: List[dict] = []
    trained = train_policy(
        policy, sampler, engine, episodes,
        estimator=estimator, seed=seed, batch_size=batch_size,
        logit_bound=logit_bound, log=log,
    )
    after = evaluate_policy(trained, sampler, eval_episodes, seed=_episode_seed(seed, 1, "after"))
    reduction = (
        1.0 - after["ineffective_fraction"] / before["ineffective_fraction"]
        if before["ineffective_fraction"] > 0 else 0.0
    )
    summary = {
        "seed": seed,
        "episodes": episodes,
        "estimator": estimator,
        "initial": before,
        "final": after,
        "ineffective_reduction": reduction,
        "accuracy_delta": after["accuracy"] - before["accuracy"],
        "final_logits": [round(x, 6) for x in trained.logits],
        "final_probs": [round(p, 6) for p in trained.probs()],
    }
    return trained, log, summary


def training_log_digest(log: Sequence[dict]) -> str:
    """Stable digest of a training log for reproducibility checks."""
    blob = json.dumps(list(log), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
