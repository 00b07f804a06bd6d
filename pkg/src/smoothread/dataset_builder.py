"""Build SFT data in Smooth Reading, Unsmooth Reading and One-Step formats.

A teacher reads each raw item chunk by chunk and produces one contextual
summary per chunk read. The same teacher run feeds all three formats, so the
variants of one source share their context text and final answer. With early
stopping the unread tail is left out of every variant.
"""

from __future__ import annotations

import enum
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .backends.remote import RemoteBackend, RemoteBackendConfig
from .backends.sim import AttentionSim, TaskProgram
from .chunker import Chunk, ChunkingConfig, split_hierarchical
from .engine import InferenceTrace, Scaffold, load_scaffold, run_smooth, run_unsmooth
from .errors import ConfigError, EmptyInput, IoError, ProtocolError, SmoothReadError, UnsupportedTask
from .metrics import DEFAULT_THRESHOLDS, score_answer
from .protocol import ContextualSummary, Decision, parse, render
from .tasks import RULE_TASKS, TASK_METRIC, Task

RULE_CHUNK_RANGE = (128, 4096)
REMOTE_CHUNK_TOKENS = 512


class Format(str, enum.Enum):
    OS = "os"
    UR = "ur"
    SR = "sr"


class TeacherKind(str, enum.Enum):
    RULE = "rule"
    REMOTE = "remote"


@dataclass
class RawItem:
    query: str
    answer: str
    context: str
    task: Task = Task.QA
    id: str = ""

    def __post_init__(self):
        self.task = Task(self.task)
        if not self.context:
            raise EmptyInput(f"raw item {self.id!r} has an empty context")

    @property
    def gold(self) -> list[str]:
        if self.task is Task.NIAH:
            return [g for g in self.answer.split(", ") if g]
        return [self.answer]

    @classmethod
    def from_dict(cls, d: dict, index: int = 0) -> "RawItem":
        answer = d["answer"]
        if isinstance(answer, list):
            answer = ", ".join(str(a) for a in answer)
        return cls(query=d["query"], answer=str(answer), context=d["context"],
                   task=Task(d.get("task", Task.QA.value)), id=str(d.get("id", index)))


@dataclass
class SftItem:
    format: Format
    turns: list[dict]
    source_id: str
    teacher: TeacherKind
    task: Task
    gold: list[str]
    context: str = ""
    final_answer: str = ""
    kept: bool = True
    clean_score: float = 0.0
    reason: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = self.format.value
        d["teacher"] = self.teacher.value
        d["task"] = self.task.value
        return d


@dataclass
class TeacherRun:
    """Chunks read and the summary written after each, plus a closing summary if reading never stopped."""

    chunks: list[Chunk]
    summaries: list[ContextualSummary]
    final: ContextualSummary | None
    chunks_total: int

    @property
    def answer(self) -> str:
        last = self.final or (self.summaries[-1] if self.summaries else None)
        return (last.final_answer or "") if last else ""

    @property
    def stopped_early(self) -> bool:
        return self.final is None


class Teacher(Protocol):
    kind: TeacherKind

    def chunking(self, raw: RawItem, index: int) -> ChunkingConfig: ...

    def read(self, raw: RawItem, chunks: list[Chunk], early_stop: bool) -> TeacherRun: ...


def run_from_trace(trace: InferenceTrace, chunks: list[Chunk]) -> TeacherRun:
    summaries, final = [], None
    for step in trace.steps:
        try:
            s = parse(step.output)
        except ProtocolError as exc:
            raise type(exc)(str(exc), step.step_index) from None
        if step.chunk_index is None:
            final = s
        else:
            summaries.append(s)
    return TeacherRun(chunks[: trace.chunks_read], summaries, final, len(chunks))


_PROGRAMS = {Task.NIAH: TaskProgram.NEEDLE_RETRIEVAL, Task.PASSAGE_COUNT: TaskProgram.PASSAGE_COUNT}


class RuleTeacher:
    """Deterministic teacher for synthetic tasks: Smooth Reading on the unbounded simulator."""

    kind = TeacherKind.RULE

    def __init__(self, seed: int = 0, chunk_range: tuple[int, int] = RULE_CHUNK_RANGE,
                 scaffold: Scaffold | None = None):
        self.seed = seed
        self.chunk_range = chunk_range
        self.scaffold = scaffold or load_scaffold()

    def chunking(self, raw: RawItem, index: int) -> ChunkingConfig:
        rng = random.Random(f"{self.seed}:{index}:{raw.id}")
        return ChunkingConfig(max_chunk_tokens=rng.randint(*self.chunk_range))

    def read(self, raw: RawItem, chunks: list[Chunk], early_stop: bool) -> TeacherRun:
        if raw.task not in RULE_TASKS:
            raise UnsupportedTask(f"rule teacher cannot solve task {raw.task.value}")
        backend = AttentionSim(program=_PROGRAMS[raw.task])
        trace = run_smooth(backend, chunks, raw.query, early_stop=early_stop, scaffold=self.scaffold)
        return run_from_trace(trace, chunks)


class RemoteTeacher:
    """LLM teacher behind a chat endpoint, read with Unsmooth Reading."""

    kind = TeacherKind.REMOTE

    def __init__(self, config: RemoteBackendConfig, chunk_tokens: int = REMOTE_CHUNK_TOKENS,
                 http=None, scaffold: Scaffold | None = None):
        self.config = config
        self.chunk_tokens = chunk_tokens
        self.http = http
        self.scaffold = scaffold or load_scaffold()

    def chunking(self, raw: RawItem, index: int) -> ChunkingConfig:
        return ChunkingConfig(max_chunk_tokens=self.chunk_tokens)

    def read(self, raw: RawItem, chunks: list[Chunk], early_stop: bool) -> TeacherRun:
        backend = RemoteBackend(self.config, http=self.http)
        trace = run_unsmooth(backend, chunks, raw.query, early_stop=early_stop,
                             chunk_tokens=self.chunk_tokens, scaffold=self.scaffold)
        return run_from_trace(trace, chunks)


def _context(run: TeacherRun) -> str:
    return "".join(c.text for c in run.chunks)


def _item(fmt: Format, raw: RawItem, teacher: Teacher, run: TeacherRun, turns: list[dict]) -> SftItem:
    return SftItem(fmt, turns, raw.id, teacher.kind, raw.task, raw.gold,
                   context=_context(run), final_answer=run.answer)


def _user(text: str) -> dict:
    return {"role": "user", "text": text}


def _assistant(text: str) -> dict:
    return {"role": "assistant", "text": text}


def sr_turns(raw: RawItem, run: TeacherRun, scaffold: Scaffold) -> list[dict]:
    turns = []
    for i, (chunk, summary) in enumerate(zip(run.chunks, run.summaries)):
        head = scaffold.smooth_preamble.format(query=raw.query) if i == 0 else ""
        turns += [_user(head + scaffold.separator + chunk.text), _assistant(render(summary))]
    if run.final is not None:
        turns += [_user(scaffold.answer_prompt), _assistant(render(run.final))]
    return turns


def ur_turns(raw: RawItem, run: TeacherRun, scaffold: Scaffold) -> list[dict]:
    query = scaffold.query_suffix.format(query=raw.query)
    turns, prev = [], ""
    for chunk, summary in zip(run.chunks, run.summaries):
        turns += [_user(prev + scaffold.separator + chunk.text + query), _assistant(render(summary))]
        prev = render(summary)
    if run.final is not None:
        turns += [_user(prev + scaffold.answer_prompt + query), _assistant(render(run.final))]
    return turns


def os_turns(raw: RawItem, run: TeacherRun, scaffold: Scaffold) -> list[dict]:
    return [_user(_context(run) + scaffold.query_suffix.format(query=raw.query)), _assistant(run.answer)]


_TURNS = {Format.SR: sr_turns, Format.UR: ur_turns, Format.OS: os_turns}


def teach(raw: RawItem, teacher: Teacher, chunk_cfg: ChunkingConfig | None = None,
          early_stop: bool = True, index: int = 0) -> TeacherRun:
    cfg = chunk_cfg or teacher.chunking(raw, index)
    return teacher.read(raw, split_hierarchical(raw.context, cfg), early_stop)


def _build(fmt: Format, raw: RawItem, teacher: Teacher, chunk_cfg, early_stop: bool,
           run: TeacherRun | None, scaffold: Scaffold | None) -> SftItem:
    scaffold = scaffold or load_scaffold()
    try:
        run = run or teach(raw, teacher, chunk_cfg, early_stop)
    except SmoothReadError as exc:
        return SftItem(fmt, [], raw.id, teacher.kind, raw.task, raw.gold, kept=False,
                       reason=f"{type(exc).__name__}: {exc}")
    return _item(fmt, raw, teacher, run, _TURNS[fmt](raw, run, scaffold))


def build_sr(raw: RawItem, teacher: Teacher, chunk_cfg: ChunkingConfig | None = None, early_stop: bool = True,
             *, run: TeacherRun | None = None, scaffold: Scaffold | None = None) -> SftItem:
    return _build(Format.SR, raw, teacher, chunk_cfg, early_stop, run, scaffold)


def build_ur(raw: RawItem, teacher: Teacher, chunk_cfg: ChunkingConfig | None = None, early_stop: bool = True,
             *, run: TeacherRun | None = None, scaffold: Scaffold | None = None) -> SftItem:
    return _build(Format.UR, raw, teacher, chunk_cfg, early_stop, run, scaffold)


def build_os(raw: RawItem, teacher: Teacher, chunk_cfg: ChunkingConfig | None = None, early_stop: bool = True,
             *, run: TeacherRun | None = None, scaffold: Scaffold | None = None) -> SftItem:
    return _build(Format.OS, raw, teacher, chunk_cfg, early_stop, run, scaffold)


def clean(items: Iterable[SftItem], threshold: float | None = None) -> tuple[list[SftItem], list[SftItem]]:
    """Score each item's final answer with its task metric and split on the threshold."""
    kept, dropped = [], []
    for item in items:
        if item.reason:  # teacher failure
            item.kept = False
            dropped.append(item)
            continue
        result = score_answer(item.task, item.final_answer, item.gold)
        limit = DEFAULT_THRESHOLDS[result.name] if threshold is None else threshold
        item.clean_score = result.value
        item.kept = result.value >= limit
        if not item.kept:
            item.reason = f"{result.name.value} {result.value:.4f} < {limit}"
        (kept if item.kept else dropped).append(item)
    return kept, dropped


@dataclass
class DatasetResult:
    items: dict[Format, list[SftItem]] = field(default_factory=dict)
    report: dict = field(default_factory=dict)


def _histogram(values: list[float], bins: int = 10) -> list[int]:
    counts = [0] * bins
    for v in values:
        counts[min(int(v * bins), bins - 1)] += 1
    return counts


def build_dataset(
    raws: list[RawItem],
    teacher: Teacher,
    formats: Iterable[Format | str] = (Format.SR, Format.UR, Format.OS),
    *,
    early_stop: bool = True,
    threshold: float | None = None,
    chunk_cfg: ChunkingConfig | None = None,
    max_workers: int = 4,
    scaffold: Scaffold | None = None,
) -> DatasetResult:
    """Teach every raw item once, emit the requested formats and clean them.

    Items run on a bounded thread pool; output keeps source order.
    """
    formats = [Format(f) for f in formats]
    if not formats:
        raise ConfigError("at least one format is required")
    if max_workers < 1:
        raise ConfigError("max_workers must be >= 1")

    def one(pair):
        index, raw = pair
        try:
            run = teach(raw, teacher, chunk_cfg, early_stop, index)
        except SmoothReadError as exc:
            return [SftItem(f, [], raw.id, teacher.kind, raw.task, raw.gold, kept=False,
                            reason=f"{type(exc).__name__}: {exc}") for f in formats]
        return [_build(f, raw, teacher, chunk_cfg, early_stop, run, scaffold) for f in formats]

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        rows = list(pool.map(one, enumerate(raws)))

    result = DatasetResult()
    report = {"sources": len(raws), "early_stop": early_stop, "teacher": teacher.kind.value, "formats": {}}
    for k, fmt in enumerate(formats):
        items = [row[k] for row in rows]
        kept, dropped = clean(items, threshold)
        result.items[fmt] = items
        report["formats"][fmt.value] = {
            "kept": len(kept),
            "dropped": len(dropped),
            "dropped_ids": [i.source_id for i in dropped],
            "score_histogram": _histogram([i.clean_score for i in items]),
        }
    by_task: dict[str, str] = {t.value: TASK_METRIC[t].value for t in {r.task for r in raws}}
    report["metrics"] = dict(sorted(by_task.items()))
    result.report = report
    return result


def load_raw_jsonl(path: str | Path) -> list[RawItem]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    items = []
    for no, line in enumerate(lines, 1):
        if line.strip():
            try:
                items.append(RawItem.from_dict(json.loads(line), no))
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path}:{no}: bad raw item ({exc})") from exc
    return items


def write_dataset(result: DatasetResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt, items in result.items.items():
        path = out / f"{fmt.value}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for item in items:
                fh.write(json.dumps(item.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
        written.append(path)
    path = out / "report.json"
    path.write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    return written
