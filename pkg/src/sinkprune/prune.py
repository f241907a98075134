"""Pruning criteria, mask construction and SparseGPT reconstruction.

Sink awareness never shows up here as a separate code path: the sink-aware
variants consume activation statistics that were accumulated from
down-weighted activations, and everything else is shared with the baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .calib import LayerActivationStats
from .errors import AllHeadsPruned, DimensionMismatch, InvalidPattern, MissingSinkProfile
from .model import NamedTensorCheckpoint, layer_tensor_name, prunable_names
from .numerics import psd_inverse

CRITERIA = ("magnitude", "wanda", "sparsegpt")


@dataclass(frozen=True)
class Pattern:
    kind: str = "rowwise"  # rowwise | nm | heads
    n: int = 0
    m: int = 0
    ratio: float = 0.0

    def __str__(self) -> str:
        if self.kind == "nm":
            return f"nm:{self.n}:{self.m}"
        if self.kind == "heads":
            return f"heads:{self.ratio!r}"
        return "rowwise"


def parse_pattern(text: str) -> Pattern:
    """``rowwise``, ``nm:N:M`` or ``heads:R``."""
    parts = text.split(":")
    try:
        if parts == ["rowwise"]:
            return Pattern()
        if parts[0] == "nm" and len(parts) == 3:
            n, m = int(parts[1]), int(parts[2])
            if not 0 <= n < m:
                raise InvalidPattern(f"n:m pattern needs 0 <= n < m, got {n}:{m}")
            return Pattern("nm", n=n, m=m)
        if parts[0] == "heads" and len(parts) == 2:
            r = float(parts[1])
            if not 0.0 <= r < 1.0:
                raise InvalidPattern(f"head ratio must lie in [0, 1), got {r}")
            return Pattern("heads", ratio=r)
    except ValueError as exc:
        raise InvalidPattern(f"cannot parse pattern {text!r}") from exc
    raise InvalidPattern(f"cannot parse pattern {text!r}")


@dataclass
class PruneMask:
    keep: np.ndarray  # bool, True = keep
    pattern: Pattern = field(default_factory=Pattern)

    @property
    def shape(self):
        return self.keep.shape


@dataclass(frozen=True)
class PruneRequest:
    criterion: str = "wanda"
    sink_aware: bool = False
    sparsity: float = 0.5
    pattern: Pattern = field(default_factory=Pattern)
    damp: float = 0.01
    blocksize: int = 32

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise InvalidPattern(f"unknown criterion {self.criterion!r}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise InvalidPattern("sparsity must lie in [0, 1]")
        if self.blocksize < 1:
            raise InvalidPattern("blocksize must be >= 1")
        if self.damp < 0:
            raise InvalidPattern("dampening must be >= 0")


def drop_count(c_in: int, sparsity: float) -> int:
    # the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    return min(c_in, int(math.floor(c_in * sparsity + 1e-9)))


def magnitude_scores(w) -> np.ndarray:
    return np.abs(np.asarray(w, dtype=np.float64))


def wanda_scores(w, stats: LayerActivationStats) -> np.ndarray:
    """|W_ij| times the l2 norm of input feature j."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != stats.c_in:
        raise DimensionMismatch(f"weight shape {w.shape} vs {stats.c_in} input features")
    return np.abs(w) * stats.column_norms()[None, :]


def select_mask(scores, sparsity: float, pattern: Pattern = Pattern()) -> PruneMask:
    """Drop the lowest-scoring entries of each row (or of each n:m group).

    Ties drop the lower column index first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rows, c_in = scores.shape
    keep = np.ones_like(scores, dtype=bool)
    if pattern.kind == "rowwise":
        if not 0.0 <= sparsity <= 1.0:
            raise InvalidPattern("sparsity must lie in [0, 1]")
        k = drop_count(c_in, sparsity)
        if k:
            order = np.argsort(scores, axis=1, kind="stable")[:, :k]
            np.put_along_axis(keep, order, False, axis=1)
    elif pattern.kind == "nm":
        n, m = pattern.n, pattern.m
        if c_in % m:
            raise InvalidPattern(f"m={m} does not divide C_in={c_in}")
        grouped = scores.reshape(rows, c_in // m, m)
        order = np.argsort(grouped, axis=2, kind="stable")[:, :, : m - n]
        gkeep = np.ones_like(grouped, dtype=bool)
        np.put_along_axis(gkeep, order, False, axis=2)
        keep = gkeep.reshape(rows, c_in)
    else:
        raise InvalidPattern(f"select_mask does not handle pattern {pattern}")
    return PruneMask(keep, pattern)


def apply_mask(w, mask: PruneMask) -> np.ndarray:
    w = np.asarray(w)
    if w.shape != mask.shape:
        raise DimensionMismatch(f"weight {w.shape} vs mask {mask.shape}")
    return np.where(mask.keep, w, np.zeros_like(w))


def verify_sparsity(mask: PruneMask) -> float:
    keep = mask.keep
    return float((keep.size - np.count_nonzero(keep)) / keep.size) if keep.size else 0.0


def dampened_hessian(stats: LayerActivationStats, damp: float) -> np.ndarray:
    h = stats.hessian().copy()
    diag = np.diag(h)
    lam = damp * float(diag.mean()) if diag.size else 0.0
    h[np.diag_indices_from(h)] += lam
    dead = np.diag(h) <= 0
    h[dead, dead] = 1.0
    return h


def _block_units(b: int, e: int, c_in: int, sparsity: float, pattern: Pattern, pruned_so_far: int):
    """(start, stop, quota) groups whose quota must be met inside [b, e)."""
    if pattern.kind == "nm":
        return [(g, g + pattern.m, pattern.m - pattern.n) for g in range(b, e, pattern.m)]
    quota = drop_count(e, sparsity) if e < c_in else drop_count(c_in, sparsity)
    return [(b, e, max(0, quota - pruned_so_far))]


def sparsegpt_prune(w, stats: LayerActivationStats, request: PruneRequest):
    """OBS pruning with weight reconstruction, block by block.

    Within a block each row repeatedly removes the weight with the smallest
    saliency w_m^2 / [H^-1]_mm among the block's live columns, applies the
    OBS correction to every not-yet-frozen column, and downdates its copy of
    H^-1. Columns of a finished block are frozen. With a single block the
    survivors of each row are the exact least-squares refit for its mask.
    """
    W = np.array(w, dtype=np.float64)
    rows, c_in = W.shape
    if stats.c_in != c_in:
        raise DimensionMismatch(f"weight has {c_in} inputs, stats have {stats.c_in}")
    pattern = request.pattern
    if pattern.kind == "nm" and c_in % pattern.m:
        raise InvalidPattern(f"m={pattern.m} does not divide C_in={c_in}")
    if pattern.kind not in ("rowwise", "nm"):
        raise InvalidPattern(f"sparsegpt does not handle pattern {pattern}")

    H = dampened_hessian(stats, request.damp)
    keep = np.ones((rows, c_in), dtype=bool)
    block = request.blocksize
    if pattern.kind == "nm":
        block = max(pattern.m, block // pattern.m * pattern.m)

    pruned = 0
    ridx = np.arange(rows)
    for b in range(0, c_in, block):
        e = min(b + block, c_in)
        units = _block_units(b, e, c_in, request.sparsity, pattern, pruned)
        if not any(q for _, _, q in units):
            continue
        hinv = np.broadcast_to(psd_inverse(H[b:, b:]), (rows, c_in - b, c_in - b)).copy()
        tail = W[:, b:]  # view; updates land in W
        for start, stop, quota in units:
            lo, hi = start - b, stop - b
            for _ in range(quota):
                diag = hinv[:, np.arange(lo, hi), np.arange(lo, hi)]
                with np.errstate(divide="ignore", invalid="ignore"):
                    sal = tail[:, lo:hi] ** 2 / diag
                sal[~keep[:, start:stop]] = np.inf
                j = lo + np.argmin(sal, axis=1)
                d = hinv[ridx, j, j]
                row_j = hinv[ridx, j, :]
                col_j = hinv[ridx, :, j]
                tail -= (tail[ridx, j] / d)[:, None] * row_j
                tail[ridx, j] = 0.0
                hinv -= col_j[:, :, None] * row_j[:, None, :] / d[:, None, None]
                keep[ridx, b + j] = False
            if pattern.kind == "rowwise":
                pruned += quota
    W[~keep] = 0.0
    return PruneMask(keep, pattern), W


def _check_sink_stats(stats: Optional[LayerActivationStats], request: PruneRequest):
    if request.criterion == "magnitude":
        return
    if stats is None:
        raise DimensionMismatch(f"{request.criterion} needs activation statistics")
    if request.sink_aware and not stats.sink_masked:
        raise MissingSinkProfile("sink-aware pruning needs sink-masked activation statistics")


def prune_layer(w, stats: Optional[LayerActivationStats], request: PruneRequest):
    """Prune one weight matrix; returns (mask, pruned float64 weights)."""
    _check_sink_stats(stats, request)
    if request.pattern.kind == "heads":
        raise InvalidPattern("head pruning works on whole checkpoints; use structured_head_prune")
    if request.criterion == "sparsegpt":
        return sparsegpt_prune(w, stats, request)
    w = np.asarray(w, dtype=np.float64)
    scores = magnitude_scores(w) if request.criterion == "magnitude" else wanda_scores(w, stats)
    mask = select_mask(scores, request.sparsity, request.pattern)
    return mask, apply_mask(w, mask)


@dataclass
class LayerResult:
    name: str
    mask: PruneMask
    sparsity: float
    recon_error: float


def prune_model(
    ckpt: NamedTensorCheckpoint,
    stats: Dict[str, LayerActivationStats],
    request: PruneRequest,
):
    """Prune every linear layer (never embed/unembed) in canonical order."""
    from .evaluate import reconstruction_error

    updates, results = {}, []
    for name in prunable_names(ckpt.config):
        w = ckpt.weight(name)
        layer_stats = stats.get(name) if stats is not None else None
        mask, w_new = prune_layer(w, layer_stats, request)
        w32 = w_new.astype(np.float32)
        err = (
            reconstruction_error(w, w32.astype(np.float64), layer_stats)
            if layer_stats is not None
            else float(np.sum((w - w32) ** 2))
        )
        updates[name] = w32
        results.append(LayerResult(name, mask, verify_sparsity(mask), err))
    return ckpt.replace(updates), results


def head_scores(ckpt: NamedTensorCheckpoint, stats: Dict[str, LayerActivationStats], layer: int) -> np.ndarray:
    """Per-head sum of Wanda scores over the head's q/k/v rows and o columns.

    A head whose output-projection columns are all zero cannot affect the
    residual stream and scores exactly zero.
    """
    cfg = ckpt.config
    dh = cfg.head_dim
    name = lambda kind: layer_tensor_name(layer, kind)  # noqa: E731
    parts = {k: wanda_scores(ckpt.weight(name(k)), stats[name(k)]) for k in ("q_proj", "k_proj", "v_proj", "o_proj")}
    o_w = ckpt.weight(name("o_proj"))
    out = np.zeros(cfg.n_heads)
    for h in range(cfg.n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        if not np.any(o_w[:, sl]):
            continue
        out[h] = (
            parts["q_proj"][sl].sum()
            + parts["k_proj"][sl].sum()
            + parts["v_proj"][sl].sum()
            + parts["o_proj"][:, sl].sum()
        )
    return out


def structured_head_prune(
    ckpt: NamedTensorCheckpoint,
    stats: Dict[str, LayerActivationStats],
    ratio: float,
):
    """Zero the floor(H * ratio) lowest-scoring heads of every layer."""
    cfg = ckpt.config
    if not 0.0 <= ratio < 1.0:
        raise InvalidPattern(f"head ratio must lie in [0, 1), got {ratio}")
    n_drop = int(math.floor(cfg.n_heads * ratio + 1e-9))
    if n_drop >= cfg.n_heads:
        raise AllHeadsPruned(f"ratio {ratio} would remove all {cfg.n_heads} heads")
    dh = cfg.head_dim
    updates, layers = {}, []
    for layer in range(cfg.n_layers):
        scores = head_scores(ckpt, stats, layer)
        dropped = sorted(int(h) for h in np.argsort(scores, kind="stable")[:n_drop])
        for kind in ("q_proj", "k_proj", "v_proj", "o_proj"):
            name = layer_tensor_name(layer, kind)
            w = np.array(ckpt.tensors[name])
            for h in dropped:
                sl = slice(h * dh, (h + 1) * dh)
                if kind == "o_proj":
                    w[:, sl] = 0.0
                else:
                    w[sl] = 0.0
            updates[name] = w
        layers.append({"layer": layer, "head_scores": scores.tolist(), "pruned_heads": dropped})
    return ckpt.replace(updates), layers
