"""Chunk-wise Smooth Reading for bounded-memory language models."""

from .chunker import Chunk, ChunkingConfig, chunk_text, estimate_tokens, split_hierarchical
from .engine import InferenceTrace, StepRecord, Strategy, run, run_one_step, run_smooth, run_unsmooth
from .protocol import ContextualSummary, Decision, parse, render

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "ChunkingConfig",
    "ContextualSummary",
    "Decision",
    "InferenceTrace",
    "StepRecord",
    "Strategy",
    "chunk_text",
    "estimate_tokens",
    "parse",
    "render",
    "run",
    "run_one_step",
    "run_smooth",
    "run_unsmooth",
    "split_hierarchical",
]
