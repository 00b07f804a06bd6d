"""Token-level simulators of bounded and unbounded model memory.

A session holds a FIFO of tokens. Text becomes tokens by splitting on
whitespace: every second word is cut into two pieces, so ``n`` words cost
``int(1.5 * n)`` tokens, the same estimate the chunker uses. Each piece keeps
the whitespace around it, so the buffer can be turned back into text.

The "model" is a rule program that looks only at the text currently in the
buffer. Anything evicted is gone, which is the whole point: whether a needle
or an earlier summary survives is decided by the window alone.

Virtual time: a token appended when the buffer holds ``k`` tokens (after the
append) costs ``p0 + p1 * min(k, W)``; generated tokens cost ``d_mult`` times
that. Sums are evaluated in closed form per call, so identical call
sequences give bit-identical clocks.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from ..chunker import TOKEN_RATIO
from ..errors import ConfigError, SessionClosed, UnsupportedTask
from ..protocol import ContextualSummary, Decision, render


class Tag(str, enum.Enum):
    CONTEXT = "context"
    SUMMARY = "summary"
    SCAFFOLD = "scaffold"


class Mode(str, enum.Enum):
    SUMMARY = "summary"
    ANSWER = "answer"


class TaskProgram(str, enum.Enum):
    NEEDLE_RETRIEVAL = "needle_retrieval"
    PASSAGE_COUNT = "passage_count"
    ECHO = "echo"


class Token(NamedTuple):
    text: str
    tag: str
    starts_word: bool


_WORD = re.compile(r"\S+")


def tokenize(text: str, tag: str = Tag.CONTEXT.value) -> list[Token]:
    """Split text into simulator tokens; ``"".join`` of the pieces gives ``text`` back."""
    tokens: list[Token] = []
    prev_end = 0
    matches = list(_WORD.finditer(text))
    for i, m in enumerate(matches):
        lead = text[prev_end:m.start()]
        word = m.group()
        trail = text[m.end():] if i == len(matches) - 1 else ""
        if i % 2:
            cut = (len(word) + 1) // 2
            tokens.append(Token(lead + word[:cut], tag, True))
            tokens.append(Token(word[cut:] + trail, tag, False))
        else:
            tokens.append(Token(lead + word + trail, tag, True))
        prev_end = m.end()
    return tokens


def count_tokens(text: str) -> int:
    return int(TOKEN_RATIO * len(text.split()))


@dataclass(frozen=True)
class SimCost:
    """Per-token virtual-time charges.

    ``free_tags`` lists source tags that advance the buffer without being
    charged; used to compare traces against formulas that ignore prompt
    scaffolding.
    """

    p0: float = 1e-4
    p1: float = 1.2e-9
    d_mult: float = 10.0
    free_tags: frozenset[str] = frozenset()

    def __post_init__(self):
        if min(self.p0, self.p1, self.d_mult) < 0:
            raise ConfigError("simulator costs must be non-negative")
        object.__setattr__(self, "free_tags", frozenset(Tag(t).value for t in self.free_tags))


@dataclass
class Generation:
    text: str
    tokens: int


# ---------------------------------------------------------------------------
# rule programs

UUID_PATTERN = r"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}"
NEEDLE_TEMPLATE = "The special magic word for {key} is {value}."
NEEDLE_RE = re.compile(rf"The special magic word for ([a-z]+) is ({UUID_PATTERN})\.")
TARGET_PHRASE = "magic words for: "
TARGET_RE = re.compile(r"magic words for: ([a-z]+(?:, [a-z]+)*)")
CLUE_RE = re.compile(rf"(?<!\S)([a-z]+)=({UUID_PATTERN}|\?)(?!\S)")

PASSAGE_RE = re.compile(r"(?m)^Paragraph \d+: ([^\n]+)\n\n")
SEEN_RE = re.compile(r"(?<!\S)seen=([0-9a-f,]*)(?!\S)")
PASSAGE_TARGET = "count the unique passages"


def passage_fingerprint(body: str) -> str:
    return hashlib.sha1(body.strip().encode("utf-8")).hexdigest()[:8]


def needle_program(text: str, mode: Mode, allow_stop: bool) -> ContextualSummary:
    keys: dict[str, str | None] = {}
    for m in TARGET_RE.finditer(text):
        for key in m.group(1).split(", "):
            keys.setdefault(key, None)
    remembered: set[str] = set()
    for m in CLUE_RE.finditer(text):
        key, value = m.groups()
        keys.setdefault(key, None)
        if value != "?":
            keys[key] = value
            remembered.add(key)
    found = []
    for m in NEEDLE_RE.finditer(text):
        key, value = m.groups()
        if key in keys:
            if key not in remembered and key not in found:
                found.append(key)
            keys[key] = value

    if not keys:
        target, reason = "", "the task is not in memory"
    else:
        target = "find the " + TARGET_PHRASE + ", ".join(keys)
        reason = f"found {', '.join(found)}" if found else "no new clues"
    clues = " ".join(f"{k}={v or '?'}" for k, v in keys.items())
    values = [v for v in keys.values() if v]
    complete = bool(keys) and len(values) == len(keys)
    if mode is Mode.ANSWER or (complete and allow_stop):
        return ContextualSummary(target, clues, reason, Decision.STOP, ", ".join(values))
    return ContextualSummary(target, clues, reason, Decision.CONTINUE, None)


def passage_count_program(text: str, mode: Mode, allow_stop: bool) -> ContextualSummary:
    seen: list[str] = []
    for m in SEEN_RE.finditer(text):
        seen.extend(fp for fp in m.group(1).split(",") if fp)
    before = len(dict.fromkeys(seen))
    seen.extend(passage_fingerprint(m.group(1)) for m in PASSAGE_RE.finditer(text))
    unique = list(dict.fromkeys(seen))
    clues = f"count={len(unique)} seen={','.join(unique)}"
    new = len(unique) - before
    reason = f"{new} new passages" if new else "no new passages"
    if mode is Mode.ANSWER:
        return ContextualSummary(PASSAGE_TARGET, clues, reason, Decision.STOP, str(len(unique)))
    return ContextualSummary(PASSAGE_TARGET, clues, reason, Decision.CONTINUE, None)


PROGRAMS: dict[TaskProgram, Callable[[str, Mode, bool], ContextualSummary]] = {
    TaskProgram.NEEDLE_RETRIEVAL: needle_program,
    TaskProgram.PASSAGE_COUNT: passage_count_program,
}


# ---------------------------------------------------------------------------
# sessions

_session_ids = itertools.count()


class SimSession:
    """One simulated model session: token FIFO, virtual clock and call log."""

    kind = "sim"

    def __init__(
        self,
        window: int | None,
        program: TaskProgram | str = TaskProgram.NEEDLE_RETRIEVAL,
        cost: SimCost | None = None,
        decode_tokens: int | None = None,
        echo_tokens: int = 16,
        session_id: str | None = None,
    ):
        if window is not None and window < 1:
            raise ConfigError(f"window must be positive, got {window}")
        try:
            self.program = TaskProgram(program)
        except ValueError:
            raise UnsupportedTask(f"unknown task program {program!r}") from None
        if decode_tokens is not None and decode_tokens < 1:
            raise ConfigError("decode_tokens must be positive")
        self.window = window
        self.cost = cost or SimCost()
        self.decode_tokens = decode_tokens
        self.echo_tokens = echo_tokens
        self.session_id = session_id or f"{self.kind}-{next(_session_ids)}"
        self.buffer: deque[Token] = deque(maxlen=window)
        self.call_log: list[dict] = []
        self.clock_seconds = 0.0
        self.closed = False

    # -- memory ------------------------------------------------------------

    def _charge(self, n: int, mult: float) -> float:
        o = len(self.buffer)
        if self.window is None:
            occupancy = n * o + n * (n + 1) // 2
        else:
            ramp = max(0, min(n, self.window - o))
            occupancy = ramp * o + ramp * (ramp + 1) // 2 + (n - ramp) * self.window
        return mult * (n * self.cost.p0 + self.cost.p1 * occupancy)

    def _append(self, tokens: list[Token], tag: str, mult: float) -> None:
        if tokens and tag not in self.cost.free_tags:
            self.clock_seconds += self._charge(len(tokens), mult)
        self.buffer.extend(tokens)

    def feed_tokens(self, tokens: list[Token]) -> int:
        if self.closed:
            raise SessionClosed(f"session {self.session_id} is closed")
        # group by tag so free/charged runs are accounted separately
        for tag, run in itertools.groupby(tokens, key=lambda t: t.tag):
            self._append(list(run), tag, 1.0)
        self.call_log.append({"kind": "feed", "tokens": len(tokens), "clock": self.clock_seconds})
        return len(tokens)

    def feed(self, text: str, tag: Tag | str = Tag.CONTEXT) -> int:
        return self.feed_tokens(tokenize(text, Tag(tag).value))

    def reset(self) -> None:
        if self.closed:
            raise SessionClosed(f"session {self.session_id} is closed")
        self.buffer.clear()
        self.call_log.append({"kind": "reset", "tokens": 0, "clock": self.clock_seconds})

    def close(self) -> None:
        self.closed = True

    def buffer_text(self) -> str:
        """Text visible to the program; a word cut by eviction is dropped."""
        tokens = iter(self.buffer)
        pieces = []
        for tok in tokens:
            if tok.starts_word:
                pieces.append(tok.text)
                break
        pieces.extend(tok.text for tok in tokens)
        return "".join(pieces)

    # -- generation ---------------------------------------------------------

    def _pad(self, summary: ContextualSummary) -> str:
        text = render(summary)
        if self.decode_tokens is None:
            return text
        budget = self.decode_tokens
        words = len(text.split())
        target_words = -(-2 * budget // 3)  # smallest n with int(1.5 n) >= budget
        if int(TOKEN_RATIO * target_words) != budget or target_words < words:
            raise ConfigError(f"cannot emit exactly {budget} tokens for this summary ({count_tokens(text)} natural)")
        pad = " ".join(["pad"] * (target_words - words))
        reason = f"{summary.reason} {pad}" if summary.reason else pad
        return render(ContextualSummary(summary.target, summary.clues, reason, summary.decision, summary.final_answer))

    def generate(self, mode: Mode | str = Mode.SUMMARY, allow_stop: bool = True) -> Generation:
        if self.closed:
            raise SessionClosed(f"session {self.session_id} is closed")
        mode = Mode(mode)
        visible = self.buffer_text()
        if self.program is TaskProgram.ECHO:
            tail = list(self.buffer)[-self.echo_tokens:]
            text = "".join(t.text for t in tail)
            tokens = [Token(t.text, Tag.SUMMARY.value, t.starts_word) for t in tail]
        else:
            text = self._pad(PROGRAMS[self.program](visible, mode, allow_stop))
            tokens = tokenize(text, Tag.SUMMARY.value)
        self._append(tokens, Tag.SUMMARY.value, self.cost.d_mult)
        self.call_log.append({"kind": "generate", "tokens": len(tokens), "clock": self.clock_seconds})
        return Generation(text, len(tokens))

    def count(self, text: str) -> int:
        return count_tokens(text)

    @property
    def resets(self) -> int:
        return sum(1 for e in self.call_log if e["kind"] == "reset")


class SlidingWindowSim(SimSession):
    """Sliding-window memory: at most ``window`` tokens, oldest evicted first."""

    kind = "sim-swa"

    def __init__(self, window: int, **kwargs):
        if window is None:
            raise ConfigError("sliding-window simulator needs a window")
        super().__init__(window, **kwargs)


class AttentionSim(SimSession):
    """Unbounded self-attention memory; per-token cost grows with length."""

    kind = "sim-attn"

    def __init__(self, window: int | None = None, **kwargs):
        # a declared window is accepted and ignored
        super().__init__(None, **kwargs)
        self.declared_window = window
