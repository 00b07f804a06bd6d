"""Analytic inference-time and memory-requirement model.

Recurrent Smooth Reading over ``n = l / c`` chunks prefills every context
token once and decodes ``g`` summary tokens per chunk, so with per-token
prefill cost ``p_r`` and decode cost ``beta * p_r``::

    T_sr = n*c*p_r + n*g*beta*p_r = (1 + g*beta/c) * l * p_r

The self-attention One-Step model is a declared quadratic
``a*l**2 + b*l`` plus ``g`` decode tokens charged at end-of-context width.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .backends.sim import SimCost
from .engine import InferenceTrace, Strategy
from .errors import IncompatibleTrace, InvalidParams


@dataclass(frozen=True)
class CostParams:
    p_r: float = 1e-4
    beta: float = 10.0
    g: float = 64.0
    c: float = 1024.0
    l: float = 32768.0
    quad_a: float = 0.0
    quad_b: float = 0.0

    def validate(self) -> "CostParams":
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise InvalidParams(f"{name} must be finite and non-negative, got {value}")
        if self.c < 1:
            raise InvalidParams(f"chunk size c must be >= 1, got {self.c}")
        return self

    def with_length(self, l: float) -> "CostParams":
        return replace(self, l=l)

    @classmethod
    def from_sim(cls, cost: SimCost, *, g: float, c: float, l: float) -> "CostParams":
        """Parameters matching a constant-cost simulator (``p1`` must be 0 for an exact match)."""
        return cls(p_r=cost.p0, beta=cost.d_mult, g=g, c=c, l=l,
                   quad_a=cost.p1 / 2, quad_b=cost.p0 + cost.p1 / 2)


def time_recurrent_sr(params: CostParams) -> float:
    p = params.validate()
    return (1 + p.g * p.beta / p.c) * p.l * p.p_r


def time_self_attn_os(params: CostParams) -> float:
    p = params.validate()
    return p.quad_a * p.l**2 + p.quad_b * p.l + p.g * (p.quad_b + 2 * p.quad_a * p.l)


def crossover_length(params: CostParams) -> float | None:
    """Length beyond which One-Step self-attention is always slower than SR.

    Returns the infimum ``L >= 0`` such that the time difference is positive
    for every ``l > L``, or None when SR stays at least as slow forever.
    """
    p = params.validate()
    k = (1 + p.g * p.beta / p.c) * p.p_r
    # D(l) = a l^2 + (b + 2 a g - k) l + g b
    a2, a1, a0 = p.quad_a, p.quad_b + 2 * p.quad_a * p.g - k, p.g * p.quad_b
    if a2 > 0:
        disc = a1 * a1 - 4 * a2 * a0
        if disc < 0:
            return 0.0
        root = (-a1 + math.sqrt(disc)) / (2 * a2)
        return max(0.0, root)
    if a1 > 0:
        return max(0.0, -a0 / a1)
    if a1 == 0 and a0 > 0:
        return 0.0
    return None


def fit_self_attn(lengths, times, g: float = 0.0) -> tuple[float, float]:
    """Least-squares ``(quad_a, quad_b)`` from One-Step clock readings."""
    l = np.asarray(lengths, dtype=float)
    t = np.asarray(times, dtype=float)
    if l.shape != t.shape or l.size < 2:
        raise InvalidParams("need at least two (length, time) readings")
    design = np.column_stack([l**2 + 2 * g * l, l + g])
    (a, b), *_ = np.linalg.lstsq(design, t, rcond=None)
    return float(a), float(b)


def validate_against_trace(trace: InferenceTrace, params: CostParams) -> float:
    """Relative error of the analytic time against a simulated clock."""
    if not trace.backend.startswith("sim"):
        raise IncompatibleTrace(f"backend {trace.backend!r} has no virtual clock")
    if trace.strategy is Strategy.SMOOTH:
        analytic = time_recurrent_sr(params)
    elif trace.strategy is Strategy.ONE_STEP:
        analytic = time_self_attn_os(params)
    else:
        raise IncompatibleTrace(f"no analytic model for strategy {trace.strategy.value}")
    if trace.virtual_time_seconds <= 0:
        raise IncompatibleTrace("trace has no elapsed virtual time")
    return abs(analytic - trace.virtual_time_seconds) / trace.virtual_time_seconds


def mr_profile(strategy: Strategy | str, c: int, l: int, g: int) -> dict[str, int]:
    """Peak memory requirement and per-step bound for a strategy."""
    strategy = Strategy(strategy)
    if strategy is Strategy.ONE_STEP:
        bound = l + g
    elif strategy is Strategy.UNSMOOTH:
        bound = 3 * c  # previous summary + chunk + new summary, each at most c
    else:
        bound = c + g
    return {"peak_mr": bound, "per_step_bound": bound}


def cost_table(params: CostParams, lengths) -> list[dict]:
    rows = []
    for l in lengths:
        p = params.with_length(l)
        sr, os_ = time_recurrent_sr(p), time_self_attn_os(p)
        rows.append({"l": l, "sr_seconds": sr, "os_seconds": os_, "speedup": os_ / sr if sr else math.inf})
    return rows
