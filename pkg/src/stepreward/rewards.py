"""Stepwise rewards from accuracy differences, with lookahead decay.

Let a = [A_1, ..., A_K, A_T] be the accuracy profile of a trajectory: one
entry per split point (accuracy of completions given the thinking prefix cut
there) plus the full-thinking accuracy. The reward credited to point p_{j+1}
is the adjacent difference a[j+1] - a[j] when that difference is significant.

An insignificant difference means the step changed nothing measurable, and
the reward is borrowed from the future instead: the first significant
difference within the lookahead window, shrunk by gamma per step of distance,
so a step that merely sits on the path to a later jump earns a discounted
share of that jump. When the window runs into the end of the profile without
finding a significant change, the final difference A_T - A_K is used with the
full remaining discount; when the window is exhausted strictly before the
end, the step earns nothing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import List

from .trajectory import AccuracyProfile, RewardTrace, SegmentationResult, Trajectory


@dataclass(frozen=True)
class RewardParams:
    gamma: float = 0.7
    l_max: int = 4
    epsilon: float = 1e-5
    outcome_weight: float = 1.0
    format_weight: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")

    def digest(self) -> str:
        blob = json.dumps(
            {
                "gamma": self.gamma,
                "l_max": self.l_max,
                "epsilon": self.epsilon,
                "outcome_weight": self.outcome_weight,
                "format_weight": self.format_weight,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def step_rewards(profile: AccuracyProfile, params: RewardParams) -> List[float]:
    """One reward per split point, K entries for a K-point profile.

    Index j of the result is credited to point p_{j+1}; the last entry is the
    final difference A_T - A_K whenever that difference is significant.
    """
    a = profile.sequence
    k = len(a) - 1
    out = []
    for j in range(k):
        delta = a[j + 1] - a[j]
        if abs(delta) >= params.epsilon:
            out.append(delta)
        else:
            out.append(_lookahead(a, j, k, params))
    return out


def _lookahead(a, j: int, k: int, params: RewardParams) -> float:
    """Decayed reward for a step with no significant local change.

    Scans differences a[j+q+1] - a[j+q] for q = 1, 2, ... while q stays
    within the window and the difference exists; returns the first
    significant one decayed by gamma**q. Falling off the end of the profile
    yields the final difference decayed by the full distance; exhausting the
    window with differences still unseen yields zero.
    """
    q = 1
    while q <= params.l_max and j + q <= k - 1:
        future = a[j + q + 1] - a[j + q]
        if abs(future) >= params.epsilon:
            return future * params.gamma ** q
        q += 1
    if j + q <= k - 1:
        return 0.0
    d_end = a[k] - a[k - 1]
    return d_end * params.gamma ** (k - j)


def check_format(traj: Trajectory) -> bool:
    """Well-formedness of a response: one marker pair, in order, then a box.

    True iff the response contains exactly one think-open and one think-close
    marker, the open one first, and a boxed answer somewhere after the close
    marker.
    """
    from .scoring import extract_boxed

    resp = traj.response
    if resp.count(traj.think_open) != 1 or resp.count(traj.think_close) != 1:
        return False
    open_at = resp.index(traj.think_open)
    close_at = resp.index(traj.think_close)
    if open_at > close_at:
        return False
    tail = resp[close_at + len(traj.think_close):]
    return extract_boxed(tail) is not None


def assemble_trace(
    traj: Trajectory,
    seg: SegmentationResult,
    rewards: List[float],
    outcome_correct: bool,
    format_ok: bool,
    params: RewardParams,
) -> RewardTrace:
    """Sparse per-token trace: stepwise entries at the points, terminal at the end.

    The trace length is the response token count; the final position carries
    outcome_weight * [correct] + format_weight * [format ok].
    """
    if len(rewards) != len(seg.points):
        raise ValueError(
            f"trajectory {traj.id!r}: {len(rewards)} rewards for {len(seg.points)} points"
        )
    length = len(traj.tokenization)
    if length < 1:
        raise ValueError(f"trajectory {traj.id!r}: empty response cannot carry a trace")
    entries = dict(zip(seg.points, rewards))
    return RewardTrace(
        length=length,
        entries=entries,
        final_outcome=params.outcome_weight if outcome_correct else 0.0,
        final_format=params.format_weight if format_ok else 0.0,
    )
