"""Split-point detection inside the thinking region.

Reasoning text is cut where transition words ("however", "wait", ...) open a
new line of thought, subject to two spacing rules: a candidate too close to
the start of the thinking region is ignored (the model is usually still
restating the problem there), and candidates too close to the previously
accepted point are ignored (steps should not degenerate into single clauses).
An accepted candidate is then relocated backward to the first token of the
sentence containing it, so prefixes cut at a point never end mid-sentence.

The relocated index is what gets emitted and what the spacing bookkeeping
tracks from then on. Relocation can move a point backward across an
intervening sentence start, so the relocated index is also re-checked against
the minimum interval; without that re-check, emitted points could sit closer
together than the configured minimum.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import List, Tuple

from .errors import SegmentationError
from .tokens import Tokenization
from .trajectory import SegmentationResult, SubRollout, Trajectory

DEFAULT_SPECIAL_TOKENS = (
    "however", "but", "wait", "thus", "so", "therefore", "alternatively", "hmm",
)
DEFAULT_SENTENCE_END_CHARS = (".", "!", "?", "\n")


@dataclass(frozen=True)
class SegmentationConfig:
    special_tokens: Tuple[str, ...] = DEFAULT_SPECIAL_TOKENS
    sentence_end_chars: Tuple[str, ...] = DEFAULT_SENTENCE_END_CHARS
    c_min: int = 200
    i_min: int = 100

    def __post_init__(self):
        if not self.special_tokens:
            raise ValueError("special_tokens must be non-empty")
        if not self.sentence_end_chars:
            raise ValueError("sentence_end_chars must be non-empty")
        if self.c_min < 0:
            raise ValueError("c_min must be >= 0")
        if self.i_min < 1:
            raise ValueError("i_min must be >= 1")

    def digest(self) -> str:
        blob = json.dumps(
            {
                "special_tokens": list(self.special_tokens),
                "sentence_end_chars": list(self.sentence_end_chars),
                "c_min": self.c_min,
                "i_min": self.i_min,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def matcher(self) -> "re.Pattern[str]":
        # whole-word, case-insensitive: "However," matches, "also" does not match "so"
        alternation = "|".join(re.escape(w) for w in sorted(self.special_tokens, key=len, reverse=True))
        return re.compile(r"\b(?:" + alternation + r")\b", re.IGNORECASE)


def _sentence_end_flags(tk: Tokenization, start: int, end: int, chars: Tuple[str, ...]) -> List[bool]:
    """flags[i] is True when span token start+i closes a sentence.

    A token closes a sentence when it ends with a terminator character or the
    whitespace after it contains one (newlines live in the gaps).
    """
    charset = set(chars)
    flags = []
    for i in range(start, end):
        tok = tk.tokens[i]
        hit = bool(tok) and tok[-1] in charset
        if not hit:
            hit = any(ch in charset for ch in tk.gap(i + 1))
        flags.append(hit)
    return flags


def segment(traj: Trajectory, cfg: SegmentationConfig) -> SegmentationResult:
    """Detect split points in the trajectory's thinking region.

    Pure function of (trajectory, config). Raises SegmentationError when the
    trajectory has no thinking region; a region without qualifying candidates
    yields an empty point set.
    """
    if traj.think_span is None:
        raise SegmentationError(f"trajectory {traj.id!r}: no thinking region")
    start, end = traj.think_span
    tk = traj.tokenization
    pattern = cfg.matcher()
    end_flags = _sentence_end_flags(tk, start, end, cfg.sentence_end_chars)

    points: List[int] = []
    last: int | None = None
    for idx in range(start, end):
        if not pattern.search(tk.tokens[idx]):
            continue
        if idx - start < cfg.c_min:
            continue
        if last is not None and idx - last < cfg.i_min:
            continue
        split = _sentence_start(end_flags, start, idx)
        if last is not None and split - last < cfg.i_min:
            continue
        points.append(split)
        last = split
    return SegmentationResult(tuple(points), cfg.digest())


def _sentence_start(end_flags: List[bool], span_start: int, idx: int) -> int:
    """First token of the sentence containing ``idx``.

    Scans backward for the nearest sentence-closing token within the span and
    returns the token after it; with no prior sentence end the candidate index
    itself is kept.
    """
    for j in range(idx - 1, span_start - 1, -1):
        if end_flags[j - span_start]:
            return j + 1
    return idx


def build_subrollouts(traj: Trajectory, seg: SegmentationResult) -> List[SubRollout]:
    """One scoring query per point: prompt + open marker + prefix + close marker.

    The prefix covers thinking tokens [span start, point); an empty point set
    yields an empty list.
    """
    if traj.think_span is None:
        raise SegmentationError(f"trajectory {traj.id!r}: no thinking region")
    start, end = traj.think_span
    tk = traj.tokenization
    subs = []
    for p in seg.points:
        if not start <= p < end:
            raise SegmentationError(
                f"trajectory {traj.id!r}: point {p} outside think span [{start}, {end})"
            )
        prefix = _slice_tokens(tk, start, p)
        subs.append(
            SubRollout(
                parent_id=traj.id,
                point_index=p,
                query_text=traj.prompt + traj.think_open + prefix + traj.think_close,
            )
        )
    return subs


def full_thinking_query(traj: Trajectory) -> str:
    """The query with the complete thinking region, used to estimate A_T."""
    if traj.think_span is None:
        raise SegmentationError(f"trajectory {traj.id!r}: no thinking region")
    start, end = traj.think_span
    prefix = _slice_tokens(traj.tokenization, start, end)
    return traj.prompt + traj.think_open + prefix + traj.think_close


def _slice_tokens(tk: Tokenization, a: int, b: int) -> str:
    if a == b:
        return ""
    return tk.text[tk.starts[a]:tk.ends[b - 1]]
