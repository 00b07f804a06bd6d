"""Model backends implementing ``f(sequence, memory) -> (sequence, memory)``.

Every backend exposes the same small surface used by the engine::

    feed(text, tag) -> tokens fed
    generate(mode, allow_stop) -> Generation(text, tokens)
    reset()
    clock_seconds, call_log
"""

from __future__ import annotations

from .remote import RemoteBackend, RemoteBackendConfig, remote_generate
from .sim import (
    AttentionSim,
    Generation,
    Mode,
    SimCost,
    SimSession,
    SlidingWindowSim,
    Tag,
    TaskProgram,
    Token,
    tokenize,
)

__all__ = [
    "AttentionSim",
    "Generation",
    "Mode",
    "RemoteBackend",
    "RemoteBackendConfig",
    "SimCost",
    "SimSession",
    "SlidingWindowSim",
    "Tag",
    "TaskProgram",
    "Token",
    "make_backend",
    "remote_generate",
    "tokenize",
]


def make_backend(name: str, window: int | None = None, **kwargs):
    if name == "sim-swa":
        return SlidingWindowSim(window, **kwargs)
    if name == "sim-attn":
        return AttentionSim(window, **kwargs)
    if name == "remote":
        return RemoteBackend(RemoteBackendConfig.from_env(**kwargs))
    from ..errors import ConfigError

    raise ConfigError(f"unknown backend {name!r}")
