"""Canonical whitespace tokenizer.

Text is split on Unicode whitespace; leading and trailing ASCII punctuation
characters are then detached one character at a time. Internal punctuation
("y'know", "Paul's") stays inside the token. Offsets are character offsets
into the input string, end-exclusive.
"""
from __future__ import annotations

import re
import string

_PUNCT = frozenset(string.punctuation)
_WS_RUN = re.compile(r"\S+")


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    out = []
    for m in _WS_RUN.finditer(text):
        chunk, base = m.group(), m.start()
        lo, hi = 0, len(chunk)
        while lo < hi and chunk[lo] in _PUNCT:
            lo += 1
        while hi > lo and chunk[hi - 1] in _PUNCT:
            hi -= 1
        for i in range(lo):
            out.append((chunk[i], base + i, base + i + 1))
        if hi > lo:
            out.append((chunk[lo:hi], base + lo, base + hi))
        for i in range(hi, len(chunk)):
            out.append((chunk[i], base + i, base + i + 1))
    return out


def tokenize(text: str) -> list[str]:
    return [tok for tok, _, _ in tokenize_with_offsets(text)]


def normalize_ws(text: str) -> str:
    return " ".join(text.split())
