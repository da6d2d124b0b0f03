"""Sub-rollout scoring: candidate generation and rule-based answer checking.

Each sub-rollout query is completed n times by a pluggable backend; the
fraction of completions whose final answer verifies against the ground truth
is that prefix's accuracy. The full-thinking query is scored the same way to
give the terminal accuracy, so every entry in a profile sits on the same c/n
grid.
"""

from __future__ import annotations

import hashlib
import math
import os
import random
import re
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence

from .errors import BackendError
from .segmenter import full_thinking_query
from .trajectory import AccuracyProfile, SubRollout, Trajectory

API_KEY_ENV = "STEPREWARD_API_KEY"

NUMERIC_TOLERANCE = 1e-6


# --- answer extraction and normalization -------------------------------------

_BOXED = re.compile(r"\\boxed\s*\{")
_NUMBERISH = re.compile(r"[-+]?(?:\d+(?:\.\d+)?|\.\d+)(?:\s*/\s*[-+]?\d+)?")
_FRAC_CMD = re.compile(r"\\[dt]?frac\s*\{([^{}]*)\}\s*\{([^{}]*)\}")
_SPACING_MACROS = re.compile(r"\\(?:,|;|!|:|qquad|quad|\s)|~")
_PLAIN_FRACTION = re.compile(r"^[-+]?\d+/[-+]?\d+$")
_TRAILING_ZEROS = re.compile(r"^([-+]?\d+\.\d*?)0+$")


def extract_boxed(text: str) -> Optional[str]:
    """Content of the last ``\\boxed{...}`` with balanced braces, or None."""
    best = None
    for m in _BOXED.finditer(text):
        depth = 1
        i = m.end()
        while i < len(text) and depth > 0:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            best = text[m.end():i - 1]
    return best


def extract_answer(text: str) -> Optional[str]:
    """Final answer string of a completion.

    Prefers the last boxed expression; with no box, falls back to the last
    standalone number (or simple fraction) on the final non-empty line.
    """
    boxed = extract_boxed(text)
    if boxed is not None:
        return boxed
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return None
    matches = _NUMBERISH.findall(lines[-1])
    return matches[-1] if matches else None


def normalize_answer(ans: str) -> str:
    """Canonical comparison form of an extracted answer.

    Strips whitespace and LaTeX spacing macros, rewrites \\frac{a}{b} as a/b,
    reduces integer fractions to lowest terms with a positive denominator,
    drops trailing zeros after a decimal point, and removes one pair of outer
    parentheses.
    """
    s = _SPACING_MACROS.sub("", ans)
    s = "".join(s.split())
    s = _FRAC_CMD.sub(lambda m: f"{m.group(1)}/{m.group(2)}", s)
    if len(s) >= 2 and s[0] == "(" and s[-1] == ")" and _balanced(s[1:-1]):
        s = s[1:-1]
    if _PLAIN_FRACTION.match(s):
        num, den = s.split("/")
        if int(den) != 0:
            s = str(Fraction(int(num), int(den)))
    m = _TRAILING_ZEROS.match(s)
    if m:
        s = m.group(1)
    if s.endswith("."):
        s = s[:-1]
    return s


def _balanced(s: str) -> bool:
    depth = 0
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


def _numeric_value(s: str) -> Optional[float]:
    try:
        return float(Fraction(s))
    except (ValueError, ZeroDivisionError):
        pass
    try:
        return float(s)
    except ValueError:
        return None


def verify_answer(candidate_text: str, ground_truth: str) -> bool:
    """True when the candidate's extracted answer matches the ground truth.

    Both sides are normalized; equality is textual first, then numeric within
    absolute tolerance 1e-6 when both sides parse as numbers. Unverifiable
    candidates (no extractable answer) are False.
    """
    extracted = extract_answer(candidate_text)
    if extracted is None:
        return False
    lhs = normalize_answer(extracted)
    rhs = normalize_answer(ground_truth)
    if lhs == rhs:
        return True
    a, b = _numeric_value(lhs), _numeric_value(rhs)
    if a is not None and b is not None:
        return math.isfinite(a) and math.isfinite(b) and abs(a - b) <= NUMERIC_TOLERANCE
    return False


@dataclass(frozen=True)
class CandidateAnswer:
    """One sampled completion with its extracted answer and verdict."""

    text: str
    extracted: Optional[str]
    correct: bool

    def __post_init__(self):
        if self.correct and self.extracted is None:
            raise ValueError("a correct candidate must have an extracted answer")


# --- generation backends -----------------------------------------------------

@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.6
    top_p: float = 0.95
    max_new_tokens: int = 768
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


class GeneratorBackend(ABC):
    """Produces n completion texts for a query."""

    kind: str

    @abstractmethod
    def generate(self, query: str, n: int) -> List[str]:
        ...


class ScriptedMockBackend(GeneratorBackend):
    """Deterministic test backend driven by a (query, rng) -> text script.

    Each candidate gets its own RNG derived from (seed, query, index), so
    results are reproducible regardless of call order.
    """

    kind = "scripted_mock"

    def __init__(self, script: Callable[[str, random.Random], str], seed: int = 0):
        self.script = script
        self.seed = seed

    def generate(self, query: str, n: int) -> List[str]:
        return [self.script(query, self._rng(query, i)) for i in range(n)]

    def _rng(self, query: str, index: int) -> random.Random:
        digest = hashlib.sha256(f"{self.seed}|{index}|{query}".encode("utf-8")).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    @classmethod
    def constant(cls, text: str, seed: int = 0) -> "ScriptedMockBackend":
        return cls(lambda query, rng: text, seed=seed)


class HttpCompletionBackend(GeneratorBackend):
    """Completion-endpoint client: POST {prompt, n, ...} -> {choices: [{text}]}.

    Retries transport failures and 5xx responses with exponential backoff
    (3 attempts, starting at 1s, doubling). The API key, when present in the
    environment, is sent as a bearer token.
    """

    kind = "http_endpoint"

    def __init__(
        self,
        endpoint: str,
        params: GenerationParams = GenerationParams(),
        stop: Sequence[str] = (),
        retries: int = 3,
        initial_backoff: float = 1.0,
        timeout: float = 60.0,
        api_key_env: str = API_KEY_ENV,
    ):
        if retries < 1:
            raise ValueError("retries must be >= 1")
        self.endpoint = endpoint
        self.params = params
        self.stop = tuple(stop)
        self.retries = retries
        self.initial_backoff = initial_backoff
        self.timeout = timeout
        self.api_key_env = api_key_env

    def generate(self, query: str, n: int) -> List[str]:
        import requests

        payload = {
            "prompt": query,
            "n": n,
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "max_tokens": self.params.max_new_tokens,
        }
        if self.stop:
            payload["stop"] = list(self.stop)
        headers = {}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        delay = self.initial_backoff
        last_err: Optional[str] = None
        for attempt in range(self.retries):
            if attempt > 0:
                time.sleep(delay)
                delay *= 2
            try:
                resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_err = f"transport error: {exc}"
                continue
            if resp.status_code >= 500:
                last_err = f"server error {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise BackendError(f"{self.endpoint}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                choices = resp.json()["choices"]
                texts = [c["text"] for c in choices]
            except (ValueError, KeyError, TypeError) as exc:
                raise BackendError(f"{self.endpoint}: malformed response body: {exc}") from exc
            return texts
        raise BackendError(f"{self.endpoint}: giving up after {self.retries} attempts ({last_err})")


# --- scoring -----------------------------------------------------------------

def score_texts(texts: Sequence[str], ground_truth: str) -> float:
    """Fraction of completions whose answer verifies; exact c/n value."""
    if not texts:
        raise ValueError("cannot score an empty candidate batch")
    correct = sum(1 for t in texts if verify_answer(t, ground_truth))
    return correct / len(texts)


def score_subrollouts(
    subs: Sequence[SubRollout],
    traj: Trajectory,
    backend: GeneratorBackend,
    n_candidates: int = 5,
) -> AccuracyProfile:
    """Accuracy profile for a trajectory's sub-rollouts plus its full thinking.

    Every query is completed exactly n_candidates times; a backend returning a
    short batch is an error, never a silent average over fewer candidates.
    """
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    sub_acc = []
    for sub in subs:
        texts = _generate_checked(backend, sub.query_text, n_candidates,
                                  f"sub-rollout at point {sub.point_index} of trajectory {sub.parent_id!r}")
        sub_acc.append(score_texts(texts, traj.ground_truth))
    main_query = full_thinking_query(traj)
    texts = _generate_checked(backend, main_query, n_candidates,
                              f"full-thinking query of trajectory {traj.id!r}")
    main_acc = score_texts(texts, traj.ground_truth)
    return AccuracyProfile(tuple(sub_acc), main_acc, n_candidates)


def _generate_checked(backend: GeneratorBackend, query: str, n: int, what: str) -> List[str]:
    try:
        texts = backend.generate(query, n)
    except BackendError as exc:
        raise BackendError(f"{what}: {exc}") from exc
    if len(texts) != n:
        raise BackendError(f"{what}: backend returned {len(texts)} candidates, expected {n}")
    return texts
