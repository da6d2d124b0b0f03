"""Lossless whitespace tokenization.

Tokens are maximal runs of non-whitespace, so trailing punctuation stays
attached to its word. Configured marker strings (the thinking delimiters) are
split out as standalone tokens even when glued to neighbours, which lets a
marker-delimited region map onto a clean token range. Character spans into the
source text are kept for every token, so any token range maps back to the
exact source substring and full detokenization reproduces the input.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Sequence, Tuple

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"


@dataclass(frozen=True)
class Tokenization:
    """Tokens of ``text`` plus the character spans they were cut from."""

    text: str
    tokens: Tuple[str, ...]
    starts: Tuple[int, ...]
    ends: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def gap(self, i: int) -> str:
        """Whitespace between token i-1 and token i.

        ``gap(0)`` is the leading whitespace, ``gap(len(self))`` the trailing.
        """
        lo = self.ends[i - 1] if i > 0 else 0
        hi = self.starts[i] if i < len(self.tokens) else len(self.text)
        return self.text[lo:hi]

    def token_index_at_char(self, pos: int) -> int:
        """Index of the first token starting at or after character ``pos``."""
        return bisect_left(self.starts, pos)


class WhitespaceTokenizer:
    """Whitespace splitter with atomic marker extraction."""

    def __init__(self, atomic: Sequence[str] = (THINK_OPEN, THINK_CLOSE)):
        for m in atomic:
            if not m or any(ch.isspace() for ch in m):
                raise ValueError(f"atomic marker must be non-empty and whitespace-free: {m!r}")
        # longest-first so overlapping markers resolve deterministically
        self.atomic = tuple(sorted(atomic, key=len, reverse=True))

    def tokenize(self, text: str) -> Tokenization:
        tokens, starts, ends = [], [], []
        cur_start = -1
        i, n = 0, len(text)

        def close(upto: int) -> None:
            nonlocal cur_start
            if cur_start >= 0:
                tokens.append(text[cur_start:upto])
                starts.append(cur_start)
                ends.append(upto)
                cur_start = -1

        while i < n:
            marker = next((m for m in self.atomic if text.startswith(m, i)), None)
            if marker is not None:
                close(i)
                tokens.append(marker)
                starts.append(i)
                ends.append(i + len(marker))
                i += len(marker)
            elif text[i].isspace():
                close(i)
                i += 1
            else:
                if cur_start < 0:
                    cur_start = i
                i += 1
        close(n)
        return Tokenization(text, tuple(tokens), tuple(starts), tuple(ends))

    def detokenize(self, tk: Tokenization, start: int = 0, end: int | None = None) -> str:
        """Rebuild text from a token range using the recorded whitespace.

        The full range reproduces the source exactly, including leading and
        trailing whitespace; a sub-range includes interior gaps only.
        """
        if end is None:
            end = len(tk)
        if not 0 <= start <= end <= len(tk):
            raise ValueError(f"token range [{start}, {end}) out of bounds for {len(tk)} tokens")
        if start == 0 and end == len(tk):
            parts = [tk.gap(0)]
            for i, tok in enumerate(tk.tokens):
                parts.append(tok)
                parts.append(tk.gap(i + 1))
            return "".join(parts)
        if start == end:
            return ""
        parts = []
        for i in range(start, end):
            if i > start:
                parts.append(tk.gap(i))
            parts.append(tk.tokens[i])
        return "".join(parts)
