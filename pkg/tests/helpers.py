"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import functools
import itertools
import random

from smoothread.backends.sim import NEEDLE_TEMPLATE
from smoothread.benchgen import niah_query

FILLER = ("river", "stone", "lamp", "field", "cloud", "paper", "window", "garden", "bread", "clock",
          "harbor", "valley", "candle", "mirror", "forest", "engine", "meadow", "ladder", "pillow", "violin")


def linear_context(n_chunks: int, words: int, rng: random.Random, key: str = "quartz",
                   value: str = "0f8fad5b-d9cb-469f-a165-70867728950e") -> tuple[str, str]:
    """``n_chunks`` paragraphs of exactly ``words`` words; the needle closes the last one.

    With ``max_chunk_tokens = 1.5 * words`` every paragraph is one chunk of
    exactly that many tokens.
    """
    needle = NEEDLE_TEMPLATE.format(key=key, value=value)
    nw = len(needle.split())
    paras = []
    for i in range(n_chunks):
        if i == n_chunks - 1:
            body = [rng.choice(FILLER) for _ in range(words - nw)] + needle.split()
        else:
            body = [rng.choice(FILLER) for _ in range(words)]
        paras.append(" ".join(body))
    return "\n\n".join(paras), niah_query([key])


def plain_context(tokens: int, rng: random.Random) -> str:
    words = -(-2 * tokens // 3)
    return " ".join(rng.choice(FILLER) for _ in range(words))


def lcs_brute(a: list[str], b: list[str]) -> int:
    """Longest common subsequence by enumerating subsequences of the shorter side."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)

    def is_subsequence(seq, of):
        it = iter(of)
        return all(any(x == y for y in it) for x in seq)

    for k in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), k):
            if is_subsequence([short[i] for i in idx], long_):
                return k
    return 0


def levenshtein_oracle(a: str, b: str) -> int:
    @functools.lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))
