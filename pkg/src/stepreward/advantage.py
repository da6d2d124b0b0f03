"""Advantage estimation over dense per-token reward lists.

Two estimators: generalized advantage estimation against a supplied value
baseline, and discounted suffix returns with optional batch normalization
(the critic-free route). Both walk right to left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

from .trajectory import AdvantageTrace

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class AdvantageParams:
    discount: float = 1.0
    gae_lambda: float = 0.95
    normalize: bool = True

    def __post_init__(self):
        if not 0 <= self.discount <= 1:
            raise ValueError("discount must be in [0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")


def gae_advantages(
    rewards: Sequence[float],
    values: Optional[Sequence[float]] = None,
    params: AdvantageParams = AdvantageParams(),
) -> AdvantageTrace:
    """GAE over one reward sequence.

    values holds one bootstrap entry beyond the rewards (len(rewards) + 1);
    None means a zero baseline throughout.
    """
    n = len(rewards)
    if values is None:
        values = [0.0] * (n + 1)
    if len(values) != n + 1:
        raise ValueError(f"values must have length {n + 1}, got {len(values)}")
    out = [0.0] * n
    acc = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + params.discount * values[t + 1] - values[t]
        acc = delta + params.discount * params.gae_lambda * acc
        out[t] = acc
    return AdvantageTrace(tuple(out), "gae")


def reinforce_pp_advantages(
    batch: Sequence[Sequence[float]],
    params: AdvantageParams = AdvantageParams(),
) -> List[AdvantageTrace]:
    """Discounted suffix returns per sequence, optionally batch-normalized.

    Normalization subtracts the mean and divides by the standard deviation of
    all return values pooled across the batch (std floored at 1e-8).
    """
    if not batch:
        raise ValueError("empty batch")
    returns: List[List[float]] = []
    for rewards in batch:
        g = [0.0] * len(rewards)
        acc = 0.0
        for t in range(len(rewards) - 1, -1, -1):
            acc = rewards[t] + params.discount * acc
            g[t] = acc
        returns.append(g)
    if params.normalize:
        pooled = [v for g in returns for v in g]
        if pooled:
            mean = math.fsum(pooled) / len(pooled)
            var = math.fsum((v - mean) ** 2 for v in pooled) / len(pooled)
            std = max(math.sqrt(var), STD_FLOOR)
            returns = [[(v - mean) / std for v in g] for g in returns]
    return [AdvantageTrace(tuple(g), "reinforce_pp") for g in returns]
