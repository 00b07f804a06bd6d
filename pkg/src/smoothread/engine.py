"""One-Step, Unsmooth Reading and Smooth Reading over any backend.

All three runners return an :class:`InferenceTrace` recording, per backend
step, how many tokens went in and came out. The memory requirement of a step
is the length of the sequence the model handles in it (input plus output).

Unsmooth Reading resets the backend before every step and re-feeds the
previous summary. Smooth Reading never resets: the query goes in once at
session start, each step feeds only a separator and the next chunk, and the
summary is decoded into the same memory so later steps can rely on it.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable

from .backends.sim import Mode, Tag
from .chunker import Chunk, estimate_tokens
from .errors import BackendError, ProtocolError
from .protocol import ContextualSummary, Decision, parse, render, try_extract_answer


class Strategy(str, enum.Enum):
    ONE_STEP = "one-step"
    UNSMOOTH = "unsmooth"
    SMOOTH = "smooth"


@dataclass(frozen=True)
class Scaffold:
    """Fixed prompt templates; token counts of a run depend on these."""

    version: str
    smooth_preamble: str
    separator: str
    query_suffix: str
    answer_prompt: str


@lru_cache(maxsize=None)
def load_scaffold(version: str = "v1") -> Scaffold:
    raw = resources.files("smoothread").joinpath(f"assets/scaffold_{version}.json").read_text(encoding="utf-8")
    return Scaffold(**json.loads(raw))


@dataclass
class StepRecord:
    step_index: int
    chunk_index: int | None
    input_tokens: int
    output_tokens: int
    mr_tokens: int
    decision: Decision
    scaffold_tokens: int = 0
    overflow: bool = False
    output: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decision"] = self.decision.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(**{**d, "decision": Decision(d["decision"])})


def memory_requirement(step: StepRecord) -> int:
    return step.input_tokens + step.output_tokens


@dataclass
class InferenceTrace:
    strategy: Strategy
    backend: str
    steps: list[StepRecord] = field(default_factory=list)
    answer: str = ""
    total_prefill_tokens: int = 0
    total_decode_tokens: int = 0
    peak_mr_tokens: int = 0
    virtual_time_seconds: float = 0.0
    chunks_read: int = 0
    chunks_total: int = 0
    scaffold_tokens: int = 0
    early_stop: bool = True
    resets: int = 0

    @property
    def total_tokens(self) -> int:
        return self.total_prefill_tokens + self.total_decode_tokens

    @property
    def decisions(self) -> list[Decision]:
        return [s.decision for s in self.steps]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["steps"] = [s.to_dict() for s in self.steps]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceTrace":
        d = dict(d)
        d["strategy"] = Strategy(d["strategy"])
        d["steps"] = [StepRecord.from_dict(s) for s in d["steps"]]
        return cls(**d)


class _Recorder:
    def __init__(self, backend, strategy: Strategy, chunks_total: int, early_stop: bool):
        self.backend = backend
        self.start_clock = backend.clock_seconds
        self.start_resets = _count_resets(backend)
        self.trace = InferenceTrace(strategy, getattr(backend, "kind", type(backend).__name__),
                                    chunks_total=chunks_total, early_stop=early_stop)

    def feed(self, text: str, tag: Tag) -> int:
        if not text:
            return 0
        try:
            return self.backend.feed(text, tag)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"backend feed failed: {exc}") from exc

    def generate(self, mode: Mode, allow_stop: bool = True):
        try:
            return self.backend.generate(mode, allow_stop)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"backend generate failed: {exc}") from exc

    def step(self, chunk_index, input_tokens, scaffold_tokens, gen, decision, overflow=False):
        rec = StepRecord(
            step_index=len(self.trace.steps),
            chunk_index=chunk_index,
            input_tokens=input_tokens,
            output_tokens=gen.tokens,
            mr_tokens=input_tokens + gen.tokens,
            decision=decision,
            scaffold_tokens=scaffold_tokens,
            overflow=overflow,
            output=gen.text,
        )
        self.trace.steps.append(rec)
        return rec

    def finish(self, answer: str) -> InferenceTrace:
        t = self.trace
        t.answer = answer
        t.total_prefill_tokens = sum(s.input_tokens for s in t.steps)
        t.total_decode_tokens = sum(s.output_tokens for s in t.steps)
        t.peak_mr_tokens = max((s.mr_tokens for s in t.steps), default=0)
        t.scaffold_tokens = max((s.scaffold_tokens for s in t.steps), default=0)
        t.virtual_time_seconds = self.backend.clock_seconds - self.start_clock
        t.resets = _count_resets(self.backend) - self.start_resets
        return t


def _count_resets(backend) -> int:
    return sum(1 for e in getattr(backend, "call_log", ()) if e["kind"] == "reset")


def _parse_step(text: str, step_index: int) -> ContextualSummary:
    try:
        return parse(text)
    except ProtocolError as exc:
        raise type(exc)(str(exc), step_index) from None


def fit_summary(summary: ContextualSummary, limit: int) -> tuple[ContextualSummary, bool]:
    """Shrink a summary to at most ``limit`` estimated tokens.

    Clues are dropped from the tail first, then the reason; the target is
    always kept.
    """
    if estimate_tokens(render(summary)) <= limit:
        return summary, False
    clues = summary.clues.split(" ")
    while clues:
        clues.pop()
        s = ContextualSummary(summary.target, " ".join(clues), summary.reason,
                              summary.decision, summary.final_answer)
        if estimate_tokens(render(s)) <= limit:
            return s, True
    return ContextualSummary(summary.target, "", "", summary.decision, summary.final_answer), True


def _as_chunks(chunks: Iterable[Chunk | str]) -> list[Chunk]:
    out = []
    for i, c in enumerate(chunks):
        out.append(c if isinstance(c, Chunk) else Chunk(i, c, estimate_tokens(c)))
    return out


def run_one_step(backend, context: str, query: str, scaffold: Scaffold | None = None) -> InferenceTrace:
    """Feed the whole context, then the query, and decode the answer."""
    scaffold = scaffold or load_scaffold()
    rec = _Recorder(backend, Strategy.ONE_STEP, chunks_total=1 if context else 0, early_stop=False)
    n_ctx = rec.feed(context, Tag.CONTEXT)
    n_q = rec.feed(scaffold.query_suffix.format(query=query), Tag.SCAFFOLD)
    gen = rec.generate(Mode.ANSWER)
    rec.step(0 if context else None, n_ctx + n_q, n_q, gen, Decision.NOT_APPLICABLE)
    rec.trace.chunks_read = rec.trace.chunks_total
    return rec.finish(try_extract_answer(gen.text))


def run_unsmooth(
    backend,
    chunks: Iterable[Chunk | str],
    query: str,
    *,
    early_stop: bool = True,
    chunk_tokens: int | None = None,
    scaffold: Scaffold | None = None,
) -> InferenceTrace:
    """Chunk-wise reading with memory reset at every step.

    Step ``i`` feeds ``render(I_{i-1}) || C_i || query`` into an emptied
    backend. Summaries longer than ``chunk_tokens`` are shrunk before being
    re-fed and the step is flagged as an overflow.
    """
    scaffold = scaffold or load_scaffold()
    chunks = _as_chunks(chunks)
    limit = chunk_tokens or max((c.est_tokens for c in chunks), default=1)
    rec = _Recorder(backend, Strategy.UNSMOOTH, len(chunks), early_stop)
    query_text = scaffold.query_suffix.format(query=query)
    prev: ContextualSummary | None = None
    for chunk in chunks:
        backend.reset()
        scaffold_n = 0
        n_in = 0
        if prev is not None:
            n_in += rec.feed(render(prev), Tag.SUMMARY)
        sep = rec.feed(scaffold.separator, Tag.SCAFFOLD)
        n_in += sep + rec.feed(chunk.text, Tag.CONTEXT)
        q = rec.feed(query_text, Tag.SCAFFOLD)
        n_in += q
        scaffold_n = sep + q
        gen = rec.generate(Mode.SUMMARY, allow_stop=early_stop)
        summary = _parse_step(gen.text, len(rec.trace.steps))
        summary, overflow = fit_summary(summary, limit)
        rec.step(chunk.index, n_in, scaffold_n, gen, summary.decision, overflow)
        rec.trace.chunks_read += 1
        prev = summary
        if summary.stopped:
            return rec.finish(summary.final_answer)

    # every chunk ended in <CONTINUE>: one more reset step asks for the answer
    backend.reset()
    n_in = rec.feed(render(prev), Tag.SUMMARY) if prev is not None else 0
    prompt = rec.feed(scaffold.answer_prompt, Tag.SCAFFOLD) + rec.feed(query_text, Tag.SCAFFOLD)
    gen = rec.generate(Mode.ANSWER)
    rec.step(None, n_in + prompt, prompt, gen, Decision.NOT_APPLICABLE)
    return rec.finish(try_extract_answer(gen.text))


def run_smooth(
    backend,
    chunks: Iterable[Chunk | str],
    query: str,
    *,
    early_stop: bool = True,
    chunk_tokens: int | None = None,
    scaffold: Scaffold | None = None,
) -> InferenceTrace:
    """Chunk-wise reading that keeps the backend's memory across steps.

    The previous summary is never re-fed; it is already in memory because it
    was decoded there. If every chunk ends in ``<CONTINUE>`` one extra step
    feeds the answer prompt and decodes the final answer.
    """
    scaffold = scaffold or load_scaffold()
    chunks = _as_chunks(chunks)
    limit = chunk_tokens or max((c.est_tokens for c in chunks), default=1)
    rec = _Recorder(backend, Strategy.SMOOTH, len(chunks), early_stop)
    pre = rec.feed(scaffold.smooth_preamble.format(query=query), Tag.SCAFFOLD)
    for chunk in chunks:
        sep = rec.feed(scaffold.separator, Tag.SCAFFOLD)
        n = rec.feed(chunk.text, Tag.CONTEXT)
        gen = rec.generate(Mode.SUMMARY, allow_stop=early_stop)
        summary = _parse_step(gen.text, len(rec.trace.steps))
        _, overflow = fit_summary(summary, limit)
        rec.step(chunk.index, pre + sep + n, pre + sep, gen, summary.decision, overflow)
        rec.trace.chunks_read += 1
        pre = 0
        if summary.stopped:
            return rec.finish(summary.final_answer)

    prompt = pre + rec.feed(scaffold.answer_prompt, Tag.SCAFFOLD)
    gen = rec.generate(Mode.ANSWER)
    rec.step(None, prompt, prompt, gen, Decision.NOT_APPLICABLE)
    return rec.finish(try_extract_answer(gen.text))


def run(strategy: Strategy | str, backend, context: str, query: str, *, chunks=None,
        early_stop: bool = True, chunk_tokens: int | None = None, scaffold: Scaffold | None = None) -> InferenceTrace:
    strategy = Strategy(strategy)
    if strategy is Strategy.ONE_STEP:
        return run_one_step(backend, context, query, scaffold)
    if chunks is None:
        from .chunker import ChunkingConfig, split_hierarchical

        chunks = split_hierarchical(context, ChunkingConfig(max_chunk_tokens=chunk_tokens or 1024)) if context else []
    runner = run_smooth if strategy is Strategy.SMOOTH else run_unsmooth
    return runner(backend, chunks, query, early_stop=early_stop, chunk_tokens=chunk_tokens, scaffold=scaffold)
