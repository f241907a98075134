"""Attention-sink statistics.

Column sums of attention matrices give the incoming attention mass per
position. Aggregated over layers and heads they drive the hard/soft sink
tests, the per-position down-weights used during pruning, and the spatial /
temporal variance summaries that contrast diffusion with AR decoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    DegenerateSequence,
    EmptyTimestepSet,
    MixedSequenceLengths,
    NotRowStochastic,
    ShapeMismatch,
)

ROW_TOL = 1e-5
SUM_OVER_QUERIES = "sum_over_queries"
MEAN_OVER_QUERIES = "mean_over_queries"


def _check_attention(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeMismatch(f"attention must be square in its last two axes, got {a.shape}")
    if a.shape[-1] == 0:
        raise DegenerateSequence("empty attention matrix")
    if np.any(a < 0) or np.max(np.abs(a.sum(axis=-1) - 1.0)) > ROW_TOL:
        raise NotRowStochastic("attention rows must be non-negative and sum to 1")
    return a


def incoming_mass(a) -> np.ndarray:
    """Column sums: m(i) = sum_j a[j, i]."""
    return _check_attention(a).sum(axis=-2)


def cumulative_attention(a) -> np.ndarray:
    """Column means: the average attention each key receives."""
    a = _check_attention(a)
    return a.sum(axis=-2) / a.shape[-1]


def _stack_step(step) -> np.ndarray:
    if isinstance(step, np.ndarray):
        arr = step
    else:
        layers = [np.asarray(layer, dtype=np.float64) for layer in step]
        shapes = {l.shape for l in layers}
        if len(shapes) != 1:
            raise ShapeMismatch(f"layers disagree on head/sequence shape: {sorted(shapes)}")
        arr = np.stack(layers)
    if arr.ndim != 4:
        raise ShapeMismatch(f"expected (layers, heads, S, S), got {arr.shape}")
    return arr


def aggregate_mass(step, aggregation: str = MEAN_OVER_QUERIES) -> np.ndarray:
    """Position-level mass at one step, summed over every layer and head.

    ``step`` is an (L, H, S, S) array or a per-layer list of (H, S, S)
    arrays. With the default aggregation the result sums to L*H.
    """
    arr = _stack_step(step)
    if aggregation == MEAN_OVER_QUERIES:
        per_head = cumulative_attention(arr)
    elif aggregation == SUM_OVER_QUERIES:
        per_head = incoming_mass(arr)
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    return per_head.sum(axis=(0, 1))


def _excess(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 1 or m.size < 2:
        raise DegenerateSequence("sink detection needs at least two positions")
    others_mean = (m.sum() - m) / (m.size - 1)
    return m - others_mean


def detect_sinks(m, epsilon: float) -> np.ndarray:
    """Positions whose mass beats the mean of all other positions by more than epsilon."""
    return np.flatnonzero(_excess(m) - epsilon > 0)


def soft_sink_score(m, epsilon: float, tau: float) -> np.ndarray:
    """Sigmoid relaxation of :func:`detect_sinks`.

    ``tau`` rescales the raw mass difference before the sigmoid; the hard
    and soft tests agree wherever the scaled excess is not lost to rounding.
    """
    if not tau > 0:
        raise ValueError("tau must be > 0")
    return expit((_excess(m) - epsilon) / tau)


def average_sink_score(scores: Sequence[np.ndarray]) -> np.ndarray:
    scores = [np.asarray(s, dtype=np.float64) for s in scores]
    if not scores:
        raise EmptyTimestepSet("no timesteps to average over")
    if len({s.shape for s in scores}) != 1:
        raise ShapeMismatch("per-step scores differ in length")
    return np.mean(np.stack(scores), axis=0)


def default_tau(n_layers: int, n_heads: int, seq_len: int) -> float:
    """Mean per-position mass under mean-over-queries aggregation."""
    return n_layers * n_heads / seq_len


def default_epsilon(n_layers: int, n_heads: int, seq_len: int) -> float:
    return 0.5 * default_tau(n_layers, n_heads, seq_len)


@dataclass
class MassSeries:
    """Per-step mass vectors. Steps may differ in length (AR growth)."""

    masses: List[np.ndarray]
    aggregation: str = SUM_OVER_QUERIES

    @property
    def n_steps(self) -> int:
        return len(self.masses)

    def padded(self) -> np.ndarray:
        """(T, S_max) matrix; positions absent at a step receive zero mass."""
        width = max(m.size for m in self.masses)
        out = np.zeros((len(self.masses), width))
        for t, m in enumerate(self.masses):
            out[t, : m.size] = m
        return out


def mass_series(trace, aggregation: str = SUM_OVER_QUERIES, steps=None) -> MassSeries:
    attention = trace.attention if hasattr(trace, "attention") else list(trace)
    if steps is not None:
        attention = [attention[t] for t in steps]
    return MassSeries([aggregate_mass(a, aggregation) for a in attention], aggregation)


def spatial_variance(series: MassSeries) -> float:
    """Population variance over positions of the step-averaged mass."""
    if series.n_steps < 1:
        raise DegenerateSequence("no steps in series")
    mbar = series.padded().mean(axis=0)
    if mbar.size < 2:
        raise DegenerateSequence("spatial variance needs at least two positions")
    return float(np.var(mbar))


@dataclass
class VarianceReport:
    spatial: float
    temporal: float
    centroids: np.ndarray
    sink_sets: List[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "spatial_variance": self.spatial,
            "temporal_variance": self.temporal,
            "centroids": self.centroids.tolist(),
            "sink_sets": [s.tolist() for s in self.sink_sets],
        }


def sink_centroid(m, epsilon: float):
    """Mass-weighted mean position of the sink set, plus the set itself.

    An empty sink set falls back to the argmax position.
    """
    m = np.asarray(m, dtype=np.float64)
    sinks = detect_sinks(m, epsilon)
    if sinks.size == 0:
        return float(np.argmax(m)), sinks
    weights = m[sinks]
    return float(np.dot(weights, sinks) / weights.sum()), sinks


def temporal_variance(series: MassSeries, epsilon: float) -> VarianceReport:
    if series.n_steps < 1:
        raise DegenerateSequence("no steps in series")
    centroids, sets = [], []
    for m in series.masses:
        c, s = sink_centroid(m, epsilon)
        centroids.append(c)
        sets.append(s)
    centroids = np.array(centroids)
    return VarianceReport(
        spatial=spatial_variance(series),
        temporal=float(np.var(centroids)),
        centroids=centroids,
        sink_sets=sets,
    )


def uniform_timesteps(n_steps: int, k: int) -> List[int]:
    """k evenly spaced steps from {1..n_steps}, ending at n_steps."""
    if n_steps < 1 or k < 1:
        raise EmptyTimestepSet("need n_steps >= 1 and k >= 1")
    k = min(k, n_steps)
    return [round((i + 1) * n_steps / k) for i in range(k)]


@dataclass
class SinkProfile:
    epsilon: float
    tau: float
    timestep_set: List[int]
    phi_bar: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.phi_bar = np.asarray(self.phi_bar, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)

    @classmethod
    def from_phi(cls, phi_bar, epsilon, tau, timestep_set) -> "SinkProfile":
        phi_bar = np.asarray(phi_bar, dtype=np.float64)
        return cls(float(epsilon), float(tau), list(timestep_set), phi_bar, 1.0 - phi_bar)

    @classmethod
    def identity(cls, seq_len: int) -> "SinkProfile":
        """All-ones down-weights: sink masking becomes a no-op."""
        return cls(0.0, 1.0, [], np.zeros(seq_len), np.ones(seq_len))

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "tau": self.tau,
            "timestep_set": list(self.timestep_set),
            "phi_bar": self.phi_bar.tolist(),
            "omega": self.omega.tolist(),
        }


def build_sink_profile(
    traces: Iterable,
    epsilon: Optional[float] = None,
    tau: Optional[float] = None,
    steps: Optional[Sequence[int]] = None,
    timestep_labels: Optional[Sequence[int]] = None,
) -> SinkProfile:
    """Average soft sink scores over the selected steps of every trace.

    ``steps`` indexes into each trace (default: all of them);
    ``timestep_labels`` is what gets recorded as the profile's timestep set.
    Default epsilon/tau scale with L*H/S.
    """
    per_trace = []
    seq_len = None
    shape_lh = None
    for trace in traces:
        attention = trace.attention if hasattr(trace, "attention") else list(trace)
        idx = range(len(attention)) if steps is None else steps
        chosen = [_stack_step(attention[t]) for t in idx]
        if not chosen:
            raise EmptyTimestepSet("no steps selected")
        for a in chosen:
            if seq_len is None:
                seq_len, shape_lh = a.shape[-1], a.shape[:2]
            elif a.shape[-1] != seq_len:
                raise MixedSequenceLengths(f"sequence length {a.shape[-1]} != {seq_len}")
        per_trace.append(chosen)
    if not per_trace:
        raise EmptyTimestepSet("no calibration traces")

    n_layers, n_heads = shape_lh
    if tau is None:
        tau = default_tau(n_layers, n_heads, seq_len)
    if epsilon is None:
        epsilon = default_epsilon(n_layers, n_heads, seq_len)

    # fixed (trace, step) order keeps the sum reproducible
    scores = [
        soft_sink_score(aggregate_mass(a), epsilon, tau)
        for chosen in per_trace
        for a in chosen
    ]
    phi_bar = average_sink_score(scores)
    if timestep_labels is None:
        timestep_labels = list(range(len(per_trace[0]))) if steps is None else list(steps)
    return SinkProfile.from_phi(phi_bar, epsilon, tau, timestep_labels)


def heatmap_rows(trace) -> List[tuple]:
    """(step, layer, head, position, mass) rows of per-head incoming mass."""
    attention = trace.attention if hasattr(trace, "attention") else list(trace)
    rows = []
    for t, step in enumerate(attention):
        masses = incoming_mass(_stack_step(step))  # (L, H, S)
        L, H, S = masses.shape
        for l in range(L):
            for h in range(H):
                for j in range(S):
                    rows.append((t, l, h, j, float(masses[l, h, j])))
    return rows
