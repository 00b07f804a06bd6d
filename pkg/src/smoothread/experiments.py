"""Window/chunk sweeps, evaluation presets and run reports."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .backends.sim import SimCost, SlidingWindowSim, TaskProgram
from .benchgen import EvalItem
from .chunker import ChunkingConfig, split_hierarchical
from .engine import InferenceTrace, Strategy, run_one_step, run_smooth, run_unsmooth
from .errors import ConfigError, EmptyReport
from .metrics import score_item
from .tasks import Task

PRESETS = {
    "longbench-swa": 1024,
    "niah-swa": 2048,
    "longbench-rwkv": 512,
    "niah-rwkv": 256,
}
DEFAULT_CHUNK_TOKENS = ChunkingConfig().max_chunk_tokens

TASK_PROGRAMS = {Task.NIAH: TaskProgram.NEEDLE_RETRIEVAL, Task.PASSAGE_COUNT: TaskProgram.PASSAGE_COUNT}


def defaults(preset: str | None = None) -> dict:
    """Evaluation settings for a named preset, or the library defaults."""
    if preset is None:
        return {"preset": None, "chunk_tokens": DEFAULT_CHUNK_TOKENS}
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
    return {"preset": preset, "chunk_tokens": PRESETS[preset]}


def program_for(task: Task) -> TaskProgram:
    return TASK_PROGRAMS.get(Task(task), TaskProgram.ECHO)


def run_item(item: EvalItem, backend, strategy: Strategy | str, chunk_tokens: int,
             early_stop: bool = True) -> InferenceTrace:
    strategy = Strategy(strategy)
    if strategy is Strategy.ONE_STEP:
        return run_one_step(backend, item.context, item.query)
    chunks = split_hierarchical(item.context, ChunkingConfig(max_chunk_tokens=chunk_tokens))
    runner = run_smooth if strategy is Strategy.SMOOTH else run_unsmooth
    return runner(backend, chunks, item.query, early_stop=early_stop, chunk_tokens=chunk_tokens)


@dataclass
class SweepConfig:
    windows: list[int] = field(default_factory=list)
    chunks: list[int] = field(default_factory=list)
    ratio_mode: float | None = None  # fixed C/W; windows are derived
    strategy: Strategy = Strategy.SMOOTH
    early_stop: bool = True
    seed: int = 0
    cost: SimCost = field(default_factory=SimCost)
    workers: int = 4

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if not self.chunks or any(c < 1 for c in self.chunks):
            raise ConfigError("sweep needs positive chunk sizes")
        if self.ratio_mode is not None:
            if self.windows:
                raise ConfigError("ratio mode and an explicit window list are mutually exclusive")
            if self.ratio_mode <= 0:
                raise ConfigError("ratio must be positive")
        elif not self.windows or any(w < 1 for w in self.windows):
            raise ConfigError("sweep needs positive window sizes or a ratio")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def cells(self) -> list[tuple[int, int]]:
        if self.ratio_mode is not None:
            return [(round(c / self.ratio_mode), c) for c in self.chunks]
        return [(w, c) for w in self.windows for c in self.chunks]


def run_cell(items: list[EvalItem], window: int, chunk: int, config: SweepConfig) -> dict:
    scores, time, tokens = [], 0.0, 0
    for item in items:
        backend = SlidingWindowSim(window, program=program_for(item.task), cost=config.cost)
        trace = run_item(item, backend, config.strategy, chunk, config.early_stop)
        scores.append(score_item(item, trace.answer).value)
        time += trace.virtual_time_seconds
        tokens += trace.total_tokens
    return {"window": window, "chunk": chunk, "accuracy": sum(scores) / len(scores),
            "virtual_time": time, "total_tokens": tokens}


def sweep(config: SweepConfig, items: list[EvalItem]) -> dict:
    """Run the suite on every (W, C) cell; rows are windows, columns chunk sizes."""
    if not items:
        raise ConfigError("sweep suite is empty")
    cells = config.cells()
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(lambda wc: run_cell(items, wc[0], wc[1], config), cells))
    out = {
        "seed": config.seed,
        "strategy": config.strategy.value,
        "early_stop": config.early_stop,
        "items": len(items),
        "cells": results,
    }
    if config.ratio_mode is not None:
        out["ratio"] = config.ratio_mode
        out["chunks"] = [r["chunk"] for r in results]
        out["windows"] = [r["window"] for r in results]
        out["accuracy"] = [r["accuracy"] for r in results]
        out["virtual_time"] = [r["virtual_time"] for r in results]
    else:
        n = len(config.chunks)
        out["windows"] = list(config.windows)
        out["chunks"] = list(config.chunks)
        out["accuracy"] = [[r["accuracy"] for r in results[i * n:(i + 1) * n]] for i in range(len(config.windows))]
        out["virtual_time"] = [[r["virtual_time"] for r in results[i * n:(i + 1) * n]]
                               for i in range(len(config.windows))]
    return out


def report(traces: list[InferenceTrace], scores: list[float], seed: int | None = None) -> dict:
    """Aggregate traces and their scores per strategy."""
    if not traces:
        raise EmptyReport("no traces to report")
    if len(scores) != len(traces):
        raise ConfigError("need one score per trace")
    groups: dict[str, list[int]] = {}
    for i, t in enumerate(traces):
        groups.setdefault(t.strategy.value, []).append(i)
    out = {"seed": seed, "traces": len(traces), "strategies": {}}
    for name in sorted(groups):
        idx = groups[name]
        ts = [traces[i] for i in idx]
        entry = {
            "n": len(idx),
            "score": round(100 * sum(scores[i] for i in idx) / len(idx), 2),
            "mean_virtual_time": sum(t.virtual_time_seconds for t in ts) / len(ts),
            "mean_total_tokens": sum(t.total_tokens for t in ts) / len(ts),
            "peak_mr_tokens": max(t.peak_mr_tokens for t in ts),
            "mean_chunks_read": sum(t.chunks_read for t in ts) / len(ts),
        }
        if any(t.early_stop for t in ts):
            hist = Counter(t.chunks_read for t in ts)
            entry["chunks_read_histogram"] = {str(k): hist[k] for k in sorted(hist)}
        out["strategies"][name] = entry
    return out


def to_csv(rows: list[dict], seed: int | None = None) -> str:
    buf = io.StringIO()
    if seed is not None:
        buf.write(f"# seed={seed}\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: json.dumps(v) if isinstance(v, (dict, list)) else v for k, v in row.items()})
    return buf.getvalue()


def report_rows(rep: dict) -> list[dict]:
    return [{"strategy": name, **{k: v for k, v in entry.items() if k != "chunks_read_histogram"}}
            for name, entry in rep["strategies"].items()]
