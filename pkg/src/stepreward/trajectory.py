"""Canonical data model and serialization.

A trajectory pairs a prompt with a model response whose reasoning region is
delimited by thinking markers. The loader tokenizes the response once and
locates the thinking span as a token range; everything downstream (points,
reward traces, advantage traces) is expressed in indices of that token
sequence. The on-disk format is JSONL with one object per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from .errors import TrajectoryError
from .tokens import THINK_CLOSE, THINK_OPEN, Tokenization, WhitespaceTokenizer

TRAJECTORY_KEYS = ("id", "prompt", "response", "ground_truth")


@dataclass(frozen=True)
class Trajectory:
    """One prompt/response pair with its tokenized view.

    think_span is the [start, end) token range strictly between the thinking
    markers; it is populated only when both markers occur exactly once, in
    order, with at least one token between them.
    """

    id: str
    prompt: str
    response: str
    ground_truth: str
    tokenization: Tokenization
    think_span: Optional[Tuple[int, int]] = None
    think_open: str = THINK_OPEN
    think_close: str = THINK_CLOSE

    def __post_init__(self):
        if self.think_span is not None:
            s, e = self.think_span
            if not (0 <= s < e <= len(self.tokenization)):
                raise ValueError(f"think_span {self.think_span} out of range for {len(self.tokenization)} tokens")

    @property
    def token_seq(self) -> Tuple[str, ...]:
        return self.tokenization.tokens

    @classmethod
    def build(
        cls,
        id: str,
        prompt: str,
        response: str,
        ground_truth: str,
        tokenizer: Optional[WhitespaceTokenizer] = None,
        think_open: str = THINK_OPEN,
        think_close: str = THINK_CLOSE,
    ) -> "Trajectory":
        tokenizer = tokenizer or WhitespaceTokenizer(atomic=(think_open, think_close))
        tk = tokenizer.tokenize(response)
        span = _find_think_span(tk.tokens, think_open, think_close)
        return cls(id, prompt, response, ground_truth, tk, span, think_open, think_close)

    def to_record(self) -> Dict[str, str]:
        return {"id": self.id, "prompt": self.prompt, "response": self.response, "ground_truth": self.ground_truth}


def _find_think_span(tokens: Tuple[str, ...], open_marker: str, close_marker: str) -> Optional[Tuple[int, int]]:
    opens = [i for i, t in enumerate(tokens) if t == open_marker]
    closes = [i for i, t in enumerate(tokens) if t == close_marker]
    if len(opens) == 1 and len(closes) == 1 and opens[0] < closes[0] and opens[0] + 1 < closes[0]:
        return (opens[0] + 1, closes[0])
    return None


def load_trajectories(
    path: str | Path,
    tokenizer: Optional[WhitespaceTokenizer] = None,
    think_open: str = THINK_OPEN,
    think_close: str = THINK_CLOSE,
) -> List[Trajectory]:
    """Parse a trajectory JSONL file; empty file yields an empty list.

    Raises TrajectoryError naming the offending line for malformed JSON,
    missing/non-string keys, or duplicate ids.
    """
    out: List[Trajectory] = []
    seen: set = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise TrajectoryError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise TrajectoryError(f"{path}: line {lineno}: expected an object")
            for key in TRAJECTORY_KEYS:
                if key not in rec:
                    raise TrajectoryError(f"{path}: line {lineno}: missing key {key!r}")
                if not isinstance(rec[key], str):
                    raise TrajectoryError(f"{path}: line {lineno}: key {key!r} must be a string")
            if rec["id"] in seen:
                raise TrajectoryError(f"{path}: line {lineno}: duplicate id {rec['id']!r}")
            seen.add(rec["id"])
            out.append(
                Trajectory.build(
                    rec["id"], rec["prompt"], rec["response"], rec["ground_truth"],
                    tokenizer=tokenizer, think_open=think_open, think_close=think_close,
                )
            )
    return out


@dataclass(frozen=True)
class SegmentationResult:
    """Sorted split-point token indices plus a digest of the config that produced them."""

    points: Tuple[int, ...]
    config_hash: str = ""

    def __post_init__(self):
        pts = self.points
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError(f"points must be strictly increasing: {pts}")


@dataclass(frozen=True)
class SubRollout:
    """A scoring query: the prompt plus the thinking prefix cut at one point."""

    parent_id: str
    point_index: int
    query_text: str


@dataclass(frozen=True)
class AccuracyProfile:
    """Per-point sub-rollout accuracies A_1..A_K plus the full-thinking accuracy A_T."""

    sub_acc: Tuple[float, ...]
    main_acc: float
    n_candidates: int

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        for a in (*self.sub_acc, self.main_acc):
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"accuracy out of [0, 1]: {a}")

    @property
    def sequence(self) -> Tuple[float, ...]:
        """sub_acc with main_acc appended; the input to the reward rule."""
        return (*self.sub_acc, self.main_acc)


@dataclass(frozen=True)
class RewardTrace:
    """Sparse per-token rewards plus the terminal outcome/format components.

    length is the response token count; entries maps token index to the
    stepwise reward placed there. The terminal components live at the final
    position and are kept separate so the dense expansion can sum them with a
    coinciding stepwise entry.
    """

    length: int
    entries: Mapping[int, float] = field(default_factory=dict)
    final_outcome: float = 0.0
    final_format: float = 0.0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("trace length must be >= 1")
        for idx in self.entries:
            if not 0 <= idx < self.length:
                raise ValueError(f"entry index {idx} outside [0, {self.length})")


def dense_rewards(trace: RewardTrace) -> List[float]:
    """Expand a sparse trace into one reward per token.

    Non-entry positions are zero; the final position carries
    final_outcome + final_format plus any stepwise entry that coincides.
    """
    dense = [0.0] * trace.length
    for idx, val in trace.entries.items():
        dense[idx] += val
    dense[trace.length - 1] += trace.final_outcome + trace.final_format
    return dense


@dataclass(frozen=True)
class AdvantageTrace:
    """Per-token advantage estimates and the estimator that produced them."""

    values: Tuple[float, ...]
    estimator_tag: str


# --- JSONL helpers -----------------------------------------------------------

def write_jsonl(path: str | Path, records: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def read_jsonl(path: str | Path) -> List[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                out.append(json.loads(raw))
            except json.JSONDecodeError as exc:
                raise TrajectoryError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
    return out


def segmentation_to_record(traj_id: str, seg: SegmentationResult) -> dict:
    return {"id": traj_id, "points": list(seg.points), "config_hash": seg.config_hash}


def segmentation_from_record(rec: Mapping) -> Tuple[str, SegmentationResult]:
    return rec["id"], SegmentationResult(tuple(rec["points"]), rec.get("config_hash", ""))


def profile_to_record(traj_id: str, prof: AccuracyProfile) -> dict:
    return {
        "id": traj_id,
        "sub_acc": list(prof.sub_acc),
        "main_acc": prof.main_acc,
        "n_candidates": prof.n_candidates,
    }


def profile_from_record(rec: Mapping) -> Tuple[str, AccuracyProfile]:
    return rec["id"], AccuracyProfile(tuple(rec["sub_acc"]), rec["main_acc"], rec["n_candidates"])


def trace_to_record(traj_id: str, trace: RewardTrace) -> dict:
    return {
        "id": traj_id,
        "length": trace.length,
        "entries": [[i, trace.entries[i]] for i in sorted(trace.entries)],
        "final_outcome": trace.final_outcome,
        "final_format": trace.final_format,
    }


def trace_from_record(rec: Mapping) -> Tuple[str, RewardTrace]:
    entries = {int(i): float(v) for i, v in rec["entries"]}
    return rec["id"], RewardTrace(rec["length"], entries, rec["final_outcome"], rec["final_format"])


def advantage_to_record(traj_id: str, adv: AdvantageTrace) -> dict:
    return {"id": traj_id, "values": list(adv.values), "estimator_tag": adv.estimator_tag}
