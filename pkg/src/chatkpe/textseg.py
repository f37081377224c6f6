"""Word-level segmentation shared by corpus alignment, the tokenizer, and
the classical baselines.

Rules: lowercase, split on whitespace, then split punctuation characters out
as single-character tokens. Offsets always index the original text.
"""

from __future__ import annotations

import re
import string
from typing import NamedTuple

_WS_CHUNK = re.compile(r"\S+")
PUNCT_CHARS = frozenset(string.punctuation)


class WordToken(NamedTuple):
    surface: str  # lowercased
    start: int
    end: int


def is_punct(surface: str) -> bool:
    """True when every character of the token is punctuation."""
    return bool(surface) and all(c in PUNCT_CHARS for c in surface)


def word_tokens(text: str) -> list[WordToken]:
    """Segment text into lowercase word and single-character punctuation
    tokens with character offsets."""
    out: list[WordToken] = []
    for chunk in _WS_CHUNK.finditer(text):
        s, piece = chunk.start(), chunk.group()
        run_start = 0
        for k, ch in enumerate(piece):
            if ch in PUNCT_CHARS:
                if run_start < k:
                    out.append(WordToken(piece[run_start:k].lower(), s + run_start, s + k))
                out.append(WordToken(ch, s + k, s + k + 1))
                run_start = k + 1
        if run_start < len(piece):
            out.append(WordToken(piece[run_start:].lower(), s + run_start, s + len(piece)))
    return out


def word_count(text: str) -> int:
    """Whitespace-delimited token count (corpus size accounting)."""
    return len(text.split())
