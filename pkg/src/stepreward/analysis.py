"""Corpus-level evaluation: pass@k, length statistics, plateau detection.

The plateau statistic replaces judge-model auditing with a deterministic
rule: once a profile's accuracy has reached saturation, any further step
whose adjacent difference is insignificant did not move the needle and is
counted as overthinking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from .trajectory import AccuracyProfile, Trajectory

DEFAULT_SATURATION_TAU = 0.99


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k: 1 - C(n-c, k) / C(n, k), computed in log space.

    n candidates, c of them correct, k draws without replacement.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= c <= n:
        raise ValueError(f"c must be in [0, {n}], got {c}")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    log_miss = _log_comb(n - c, k) - _log_comb(n, k)
    return min(1.0, max(0.0, -math.expm1(log_miss)))


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


@dataclass(frozen=True)
class PassAtKReport:
    """pass@k estimates per problem and averaged over the corpus."""

    n: int
    ks: Tuple[int, ...]
    per_problem: Tuple[Tuple[str, int, Tuple[float, ...]], ...]  # (id, c, estimates)
    mean_estimates: Tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": list(self.ks),
            "mean_estimates": list(self.mean_estimates),
            "per_problem": [
                {"id": pid, "n": self.n, "c": c, "estimates": list(est)}
                for pid, c, est in self.per_problem
            ],
        }


def pass_at_k_report(
    profiles: Dict[str, AccuracyProfile],
    ks: Sequence[int] | None = None,
) -> PassAtKReport:
    """Build a pass@k report from full-thinking accuracies.

    Each profile contributes (n_candidates, round(main_acc * n)) as its
    (n, c); all profiles must share one n so the k grid is common.
    """
    if not profiles:
        raise ValueError("no profiles to report on")
    ns = {p.n_candidates for p in profiles.values()}
    if len(ns) > 1:
        raise ValueError(f"profiles disagree on n_candidates: {sorted(ns)}")
    n = ns.pop()
    ks = tuple(ks) if ks is not None else tuple(range(1, n + 1))
    rows = []
    for pid, prof in profiles.items():
        c = round(prof.main_acc * n)
        rows.append((pid, c, tuple(pass_at_k(n, c, k) for k in ks)))
    means = tuple(
        math.fsum(row[2][i] for row in rows) / len(rows) for i in range(len(ks))
    )
    return PassAtKReport(n, ks, tuple(rows), means)


@dataclass(frozen=True)
class LengthStats:
    count: int
    mean: float
    median: float
    p90: float

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "median": self.median, "p90": self.p90}


def length_stats(lengths: Sequence[int]) -> LengthStats:
    """Mean, median, and 90th percentile (linear interpolation) of lengths."""
    if not lengths:
        raise ValueError("empty length list")
    xs = sorted(lengths)
    n = len(xs)
    mean = math.fsum(xs) / n
    mid = n // 2
    median = float(xs[mid]) if n % 2 else (xs[mid - 1] + xs[mid]) / 2
    return LengthStats(n, mean, median, _percentile(xs, 90.0))


def _percentile(sorted_xs: Sequence[int], pct: float) -> float:
    pos = (len(sorted_xs) - 1) * pct / 100.0
    lo = math.floor(pos)
    hi = math.ceil(pos)
    if lo == hi:
        return float(sorted_xs[lo])
    frac = pos - lo
    return sorted_xs[lo] * (1 - frac) + sorted_xs[hi] * frac


def response_length_stats(trajs: Sequence[Trajectory]) -> LengthStats:
    return length_stats([len(t.tokenization) for t in trajs])


@dataclass(frozen=True)
class OverthinkStats:
    plateau_steps: int
    total_steps: int

    @property
    def fraction(self) -> float:
        return self.plateau_steps / self.total_steps if self.total_steps else 0.0

    def to_dict(self) -> dict:
        return {
            "plateau_steps": self.plateau_steps,
            "total_steps": self.total_steps,
            "fraction": self.fraction,
        }


def overthink_stats(
    profile: AccuracyProfile,
    epsilon: float,
    tau: float = DEFAULT_SATURATION_TAU,
) -> OverthinkStats:
    """Plateau count for one profile.

    A transition counts as a plateau step when its source entry is at or past
    the first entry >= tau and its magnitude is below epsilon. Transitions run
    over the full sequence including the final accuracy; steps before
    saturation never count.
    """
    a = profile.sequence
    total = len(a) - 1
    sat = next((i for i, v in enumerate(a) if v >= tau), None)
    if sat is None:
        return OverthinkStats(0, total)
    plateau = sum(
        1 for j in range(sat, total) if abs(a[j + 1] - a[j]) < epsilon
    )
    return OverthinkStats(plateau, total)


def corpus_overthink(
    profiles: Dict[str, AccuracyProfile],
    epsilon: float,
    tau: float = DEFAULT_SATURATION_TAU,
) -> dict:
    """Per-trajectory plateau stats plus corpus aggregate; empty corpus is all zero."""
    per = {pid: overthink_stats(p, epsilon, tau) for pid, p in profiles.items()}
    plateau = sum(s.plateau_steps for s in per.values())
    total = sum(s.total_steps for s in per.values())
    return {
        "per_trajectory": [{"id": pid, **s.to_dict()} for pid, s in per.items()],
        "aggregate": {
            "plateau_steps": plateau,
            "total_steps": total,
            "fraction": plateau / total if total else 0.0,
            "trajectories": len(per),
        },
    }


def build_report(
    trajs: Sequence[Trajectory],
    profiles: Dict[str, AccuracyProfile],
    epsilon: float,
    tau: float = DEFAULT_SATURATION_TAU,
) -> dict:
    """The analyze artifact: lengths, pass@k, and overthink in one dict."""
    report: dict = {"length": response_length_stats(trajs).to_dict() if trajs else None}
    report["pass_at_k"] = pass_at_k_report(profiles).to_dict() if profiles else None
    report["overthink"] = corpus_overthink(profiles, epsilon, tau)
    return report
