"""Hierarchical delimiter chunking with word-based token estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ConfigError, EmptyInput

DEFAULT_DELIMITERS: tuple[str, ...] = (
    "\n\n\n", "\n\n", "\n", ". ", ".", "! ", "? ", ", ", "; ", ": ", " -- ", " ",
)
TOKEN_RATIO = Fraction(3, 2)


def count_words(text: str) -> int:
    return len(text.split())


def estimate_tokens(text: str, ratio: Fraction = TOKEN_RATIO) -> int:
    """Estimated token count: ``int(ratio * n_words)``, truncated toward zero."""
    return int(ratio * count_words(text))


@dataclass(frozen=True)
class ChunkingConfig:
    max_chunk_tokens: int = 1024
    delimiters: tuple[str, ...] = DEFAULT_DELIMITERS
    token_ratio: Fraction = TOKEN_RATIO

    def __post_init__(self):
        object.__setattr__(self, "delimiters", tuple(self.delimiters))
        object.__setattr__(self, "token_ratio", Fraction(self.token_ratio))
        if not self.delimiters:
            raise ConfigError("delimiter list is empty")
        if any(d == "" for d in self.delimiters):
            raise ConfigError("empty-string delimiter")
        if self.max_chunk_tokens < 1:
            raise ConfigError(f"max_chunk_tokens must be >= 1, got {self.max_chunk_tokens}")
        if self.token_ratio <= 0:
            raise ConfigError("token_ratio must be positive")


@dataclass(frozen=True)
class Chunk:
    index: int
    text: str
    est_tokens: int
    byte_span: tuple[int, int] = field(default=(0, 0))

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "est_tokens": self.est_tokens,
            "byte_span": list(self.byte_span),
        }


def _split_keep(text: str, delim: str) -> list[str]:
    # delimiter stays attached to the piece before it
    parts = text.split(delim)
    pieces = [p + delim for p in parts[:-1]]
    if parts[-1]:
        pieces.append(parts[-1])
    return pieces


def _joined_words(left: str, left_words: int, right: str, right_words: int) -> int:
    # a word straddling the join counts once
    if left and right and not left[-1].isspace() and not right[0].isspace():
        if left_words and right_words:
            return left_words + right_words - 1
    return left_words + right_words


class _Splitter:
    def __init__(self, config: ChunkingConfig):
        self.cfg = config

    def tokens(self, words: int) -> int:
        return int(self.cfg.token_ratio * words)

    def split(self, text: str, level: int) -> list[tuple[str, int]]:
        words = count_words(text)
        if self.tokens(words) <= self.cfg.max_chunk_tokens:
            return [(text, words)]
        delims = self.cfg.delimiters
        for k in range(level, len(delims)):
            if delims[k] in text:
                break
        else:
            return [(text, words)]  # atomic: nothing left to split on

        units: list[tuple[str, int]] = []
        for piece in _split_keep(text, delims[k]):
            units.extend(self.split(piece, k + 1))
        return self.merge(units)

    def merge(self, units: list[tuple[str, int]]) -> list[tuple[str, int]]:
        limit = self.cfg.max_chunk_tokens
        out: list[tuple[str, int]] = []
        cur, cur_words = "", 0
        for text, words in units:
            if self.tokens(words) > limit:
                if cur:
                    out.append((cur, cur_words))
                    cur, cur_words = "", 0
                out.append((text, words))
                continue
            joined = _joined_words(cur, cur_words, text, words)
            if cur and self.tokens(joined) > limit:
                out.append((cur, cur_words))
                cur, cur_words = text, words
            else:
                cur, cur_words = cur + text, joined
        if cur:
            out.append((cur, cur_words))
        return out


def split_hierarchical(text: str, config: ChunkingConfig | None = None) -> list[Chunk]:
    """Split ``text`` into size-bounded chunks along a delimiter hierarchy.

    The highest-priority delimiter present splits the text; adjacent pieces
    are merged left to right while the estimate stays within
    ``max_chunk_tokens``, and pieces still too large are split again at the
    next delimiter level. A run with no delimiter left is emitted whole, even
    if oversized. Concatenating the chunk texts reproduces ``text`` exactly.
    """
    if not text:
        raise EmptyInput("cannot chunk empty text")
    config = config or ChunkingConfig()
    pieces = _Splitter(config).split(text, 0)

    chunks = []
    offset = 0
    for i, (piece, words) in enumerate(pieces):
        size = len(piece.encode("utf-8"))
        chunks.append(Chunk(i, piece, int(config.token_ratio * words), (offset, offset + size)))
        offset += size
    return chunks


def chunk_text(text: str, max_chunk_tokens: int, **kwargs) -> list[Chunk]:
    return split_hierarchical(text, ChunkingConfig(max_chunk_tokens=max_chunk_tokens, **kwargs))
