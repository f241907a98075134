"""Quality metrics for pruned checkpoints."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np
from scipy.special import log_softmax

from .errors import DimensionMismatch, WrongMode
from .model import AUTOREGRESSIVE, MASKED_DIFFUSION, NamedTensorCheckpoint, forward, prunable_names


def reconstruction_error(w, w_tilde, stats) -> float:
    """||W X - W~ X||_F^2 summed over calibration data, via trace(D H D^T)."""
    w = np.asarray(w, dtype=np.float64)
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    if w.shape != w_tilde.shape or w.shape[1] != stats.c_in:
        raise DimensionMismatch(f"shapes {w.shape}, {w_tilde.shape} vs {stats.c_in} inputs")
    d = w - w_tilde
    return float(np.sum((d @ stats.hessian_acc) * d))


def global_sparsity(ckpt: NamedTensorCheckpoint) -> float:
    """Fraction of exact zeros over all prunable tensors."""
    zeros = total = 0
    for name in prunable_names(ckpt.config):
        t = ckpt.tensors[name]
        zeros += t.size - np.count_nonzero(t)
        total += t.size
    return zeros / total


def _as_sequences(eval_set) -> np.ndarray:
    seqs = getattr(eval_set, "sequences", eval_set)
    return np.asarray(seqs, dtype=np.int64)


def _predict(logits: np.ndarray, mask_id: Optional[int]) -> np.ndarray:
    if mask_id is not None:
        logits = logits.copy()
        logits[..., mask_id] = -np.inf
    return np.argmax(logits, axis=-1)


def masked_accuracy(ckpt: NamedTensorCheckpoint, eval_set, mask_ratio: float, seed: int) -> float:
    """Fraction of masked positions whose one-shot prediction is the original token.

    Masks floor(S * mask_ratio) positions per sequence. If nothing ends up
    masked the accuracy is vacuously 1.0.
    """
    cfg = ckpt.config
    if cfg.mode != MASKED_DIFFUSION:
        raise WrongMode("masked_accuracy needs a masked_diffusion model")
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError("mask_ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    hits = total = 0
    for seq in _as_sequences(eval_set):
        k = int(seq.size * mask_ratio)
        if k == 0:
            continue
        pos = np.sort(rng.choice(seq.size, size=k, replace=False))
        noisy = seq.copy()
        noisy[pos] = cfg.mask_id
        preds = _predict(forward(ckpt, noisy, capture_attention=False).logits[pos], cfg.mask_id)
        hits += int(np.sum(preds == seq[pos]))
        total += k
    return hits / total if total else 1.0


def pseudo_perplexity(
    ckpt: NamedTensorCheckpoint, eval_set, positions_per_seq: int = 8, seed: int = 0
) -> float:
    """exp of the mean NLL of the true token, masking one position at a time."""
    cfg = ckpt.config
    if cfg.mode != MASKED_DIFFUSION:
        raise WrongMode("pseudo_perplexity needs a masked_diffusion model")
    rng = np.random.default_rng(seed)
    nll = []
    for seq in _as_sequences(eval_set):
        k = min(positions_per_seq, seq.size)
        for p in np.sort(rng.choice(seq.size, size=k, replace=False)):
            noisy = seq.copy()
            noisy[p] = cfg.mask_id
            logp = log_softmax(forward(ckpt, noisy, capture_attention=False).logits[p])
            nll.append(-logp[seq[p]])
    return float(np.exp(np.mean(nll))) if nll else 1.0


def next_token_accuracy(ckpt: NamedTensorCheckpoint, eval_set) -> float:
    """Teacher-forced next-token accuracy (AR stand-in for masked accuracy)."""
    if ckpt.config.mode != AUTOREGRESSIVE:
        raise WrongMode("next_token_accuracy needs an autoregressive model")
    hits = total = 0
    for seq in _as_sequences(eval_set):
        if seq.size < 2:
            continue
        preds = _predict(forward(ckpt, seq, capture_attention=False).logits[:-1], None)
        hits += int(np.sum(preds == seq[1:]))
        total += seq.size - 1
    return hits / total if total else 1.0


def next_token_perplexity(ckpt: NamedTensorCheckpoint, eval_set) -> float:
    if ckpt.config.mode != AUTOREGRESSIVE:
        raise WrongMode("next_token_perplexity needs an autoregressive model")
    nll = []
    for seq in _as_sequences(eval_set):
        if seq.size < 2:
            continue
        logp = log_softmax(forward(ckpt, seq, capture_attention=False).logits[:-1], axis=-1)
        nll.extend(-logp[np.arange(seq.size - 1), seq[1:]])
    return float(np.exp(np.mean(nll))) if nll else 1.0


def evaluate(
    ckpt: NamedTensorCheckpoint,
    eval_set,
    mask_ratio: float = 0.15,
    seed: int = 0,
    positions_per_seq: int = 8,
) -> Dict[str, float]:
    """Mode-appropriate accuracy/perplexity plus global sparsity."""
    if ckpt.config.mode == MASKED_DIFFUSION:
        acc = masked_accuracy(ckpt, eval_set, mask_ratio, seed)
        ppl = pseudo_perplexity(ckpt, eval_set, positions_per_seq, seed)
    else:
        acc = next_token_accuracy(ckpt, eval_set)
        ppl = next_token_perplexity(ckpt, eval_set)
    return {
        "accuracy": acc,
        "perplexity": ppl,
        "global_sparsity": global_sparsity(ckpt),
    }
