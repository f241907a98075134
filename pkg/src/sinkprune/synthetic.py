"""Scripted attention traces with known sink behaviour.

These let the sink statistics be exercised without running a model:

* ``stationary``: causal attention with a fixed sink at one early position,
  the pattern usually seen in AR decoders.
* ``drifting``: bidirectional attention whose sink walks from the first to
  the last position as steps advance.
* ``uniform``: every query spreads its attention evenly.
"""

from __future__ import annotations

import numpy as np

from .model import AttentionTrace

KINDS = ("stationary", "drifting", "uniform")


def _finish(rows: np.ndarray, n_layers: int, n_heads: int, rng, jitter: float) -> np.ndarray:
    S = rows.shape[0]
    out = np.broadcast_to(rows, (n_layers, n_heads, S, S)).copy()
    if jitter > 0:
        support = out > 0
        out = out + jitter * rng.random(out.shape) * support
        out /= out.sum(axis=-1, keepdims=True)
    return out


def stationary_sink_trace(
    n_steps: int,
    seq_len: int,
    n_layers: int = 1,
    n_heads: int = 1,
    sink: int = 0,
    strength: float = 0.8,
    jitter: float = 0.0,
    seed: int = 0,
) -> AttentionTrace:
    rng = np.random.default_rng(seed)
    trace = AttentionTrace()
    for _ in range(n_steps):
        rows = np.zeros((seq_len, seq_len))
        for i in range(seq_len):
            rows[i, : i + 1] = (1.0 - strength) / (i + 1)
            rows[i, min(sink, i)] += strength
        trace.attention.append(_finish(rows, n_layers, n_heads, rng, jitter))
    return trace


def drifting_sink_trace(
    n_steps: int,
    seq_len: int,
    n_layers: int = 1,
    n_heads: int = 1,
    strength: float = 0.8,
    jitter: float = 0.0,
    seed: int = 0,
) -> AttentionTrace:
    rng = np.random.default_rng(seed)
    trace = AttentionTrace()
    for t in range(n_steps):
        pos = 0 if n_steps == 1 else round(t * (seq_len - 1) / (n_steps - 1))
        rows = np.full((seq_len, seq_len), (1.0 - strength) / seq_len)
        rows[:, pos] += strength
        trace.attention.append(_finish(rows, n_layers, n_heads, rng, jitter))
    return trace


def uniform_trace(n_steps: int, seq_len: int, n_layers: int = 1, n_heads: int = 1) -> AttentionTrace:
    rows = np.full((seq_len, seq_len), 1.0 / seq_len)
    trace = AttentionTrace()
    for _ in range(n_steps):
        trace.attention.append(_finish(rows, n_layers, n_heads, None, 0.0))
    return trace


def synthetic_trace(kind: str, n_steps: int, seq_len: int, n_layers: int = 1, n_heads: int = 1, **kw):
    if kind == "stationary":
        return stationary_sink_trace(n_steps, seq_len, n_layers, n_heads, **kw)
    if kind == "drifting":
        return drifting_sink_trace(n_steps, seq_len, n_layers, n_heads, **kw)
    if kind == "uniform":
        return uniform_trace(n_steps, seq_len, n_layers, n_heads)
    raise ValueError(f"unknown synthetic trace kind {kind!r}; expected one of {KINDS}")
