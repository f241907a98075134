"""Calibration data: corpus ingestion, window sampling, noising, and
per-layer activation statistics (optionally sink-masked)."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import CorpusTooShort, InvalidSteps, ProfileLengthMismatch, VocabTooSmall, WrongMode
from .model import AUTOREGRESSIVE, AttentionTrace, ModelConfig, NamedTensorCheckpoint, forward, prunable_names
from .sinkstats import SinkProfile

BYTE = "byte"
WHITESPACE_HASH = "whitespace-hash"


def tokenize(text, mode: str = BYTE, vocab_size: int = 257) -> List[int]:
    if isinstance(text, str):
        text = text.encode("utf-8")
    if mode == BYTE:
        if vocab_size < 257:
            raise VocabTooSmall("byte tokenizer needs vocab_size >= 257 (256 bytes + MASK)")
        return list(text)
    if mode == WHITESPACE_HASH:
        if vocab_size < 2:
            raise VocabTooSmall("vocab_size must be >= 2")
        return [
            int.from_bytes(hashlib.blake2b(word, digest_size=8).digest(), "little") % (vocab_size - 1)
            for word in text.split()
        ]
    raise ValueError(f"unknown tokenizer {mode!r}")


@dataclass
class Corpus:
    documents: List[List[int]]
    tokenizer: str = BYTE
    vocab_size: int = 257


def load_corpus(path, tokenizer: str = BYTE, vocab_size: int = 257) -> Corpus:
    """UTF-8 text file; documents are separated by blank lines."""
    text = Path(path).read_text(encoding="utf-8")
    docs = [d.strip() for d in re.split(r"\n\s*\n", text)]
    return Corpus([tokenize(d, tokenizer, vocab_size) for d in docs if d], tokenizer, vocab_size)


@dataclass
class CalibrationSet:
    sequences: np.ndarray  # (N, S_cal) int64
    seed: int
    windows: List[tuple] = field(default_factory=list)  # (document, offset)

    @property
    def seq_len(self) -> int:
        return self.sequences.shape[1]

    def __len__(self) -> int:
        return self.sequences.shape[0]


def _overlaps(doc, off, s_cal, taken) -> bool:
    return any(d == doc and abs(o - off) < s_cal for d, o in taken)


def sample_calibration(
    corpus: Corpus, n: int, s_cal: int, seed: int, exclude: Optional[CalibrationSet] = None
) -> CalibrationSet:
    """``n`` windows drawn uniformly, with replacement, over all valid offsets.

    ``exclude`` removes every window overlapping one of its windows, which
    is how held-out evaluation sets stay disjoint from calibration data.
    """
    if s_cal < 1:
        raise CorpusTooShort("s_cal must be >= 1")
    windows = [
        (d, off)
        for d, doc in enumerate(corpus.documents)
        for off in range(len(doc) - s_cal + 1)
    ]
    if exclude is not None:
        taken = exclude.windows
        windows = [w for w in windows if not _overlaps(*w, exclude.seq_len, taken)]
    if n == 0:
        return CalibrationSet(np.zeros((0, s_cal), dtype=np.int64), seed, [])
    if not windows:
        raise CorpusTooShort(f"no document admits a window of length {s_cal}")
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(windows), size=n)
    chosen = [windows[i] for i in picks]
    seqs = np.array([corpus.documents[d][o : o + s_cal] for d, o in chosen], dtype=np.int64)
    return CalibrationSet(seqs, seed, chosen)


def _rng(seed, t):
    parts = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return np.random.default_rng([*parts, t])


def noise_at_timestep(seq, t: int, n_steps: int, seed, config: ModelConfig) -> np.ndarray:
    """Replace floor(S * t / T) uniformly chosen positions with MASK."""
    if config.mode == AUTOREGRESSIVE:
        raise WrongMode("AR calibration uses clean sequences")
    if not 1 <= t <= n_steps:
        raise InvalidSteps(f"timestep {t} outside 1..{n_steps}")
    seq = np.array(seq, dtype=np.int64)
    count = (seq.size * t) // n_steps
    pos = _rng(seed, t).choice(seq.size, size=count, replace=False)
    seq[pos] = config.mask_id
    return seq


def calibration_inputs(ckpt: NamedTensorCheckpoint, calib: CalibrationSet, timesteps, n_steps):
    """Yield (sequence index, model input) pairs in canonical order.

    Diffusion models see each sequence noised at every timestep in
    ``timesteps``; AR models see the clean sequence once.
    """
    cfg = ckpt.config
    for n, seq in enumerate(calib.sequences):
        if cfg.mode == AUTOREGRESSIVE:
            yield n, seq
        else:
            for t in timesteps:
                yield n, noise_at_timestep(seq, t, n_steps, (calib.seed, n), cfg)


def calibration_traces(ckpt, calib: CalibrationSet, timesteps, n_steps) -> List[AttentionTrace]:
    """One trace per calibration sequence, one step per noised input (pass 1)."""
    traces = [AttentionTrace() for _ in range(len(calib))]
    for n, inp in calibration_inputs(ckpt, calib, timesteps, n_steps):
        traces[n].attention.append(forward(ckpt, inp).attention)
        traces[n].tokens.append(inp)
    return traces


@dataclass
class LayerActivationStats:
    column_sq_norms: np.ndarray
    hessian_acc: np.ndarray
    sample_count: int = 0
    sink_masked: bool = False

    @classmethod
    def empty(cls, c_in: int, sink_masked: bool = False) -> "LayerActivationStats":
        return cls(np.zeros(c_in), np.zeros((c_in, c_in)), 0, sink_masked)

    @classmethod
    def from_activations(cls, xs: Sequence[np.ndarray], omega=None) -> "LayerActivationStats":
        """Accumulate a list of (S, C_in) activation matrices."""
        xs = [np.asarray(x, dtype=np.float64) for x in xs]
        stats = cls.empty(xs[0].shape[1], sink_masked=omega is not None)
        for x in xs:
            stats.add(x, omega)
        return stats

    @property
    def c_in(self) -> int:
        return self.column_sq_norms.size

    def add(self, x: np.ndarray, omega=None) -> None:
        if omega is not None:
            x = np.asarray(omega, dtype=np.float64)[:, None] * x
        self.hessian_acc += x.T @ x
        self.column_sq_norms += np.einsum("ij,ij->j", x, x)
        self.sample_count += 1

    def merge(self, other: "LayerActivationStats") -> None:
        self.hessian_acc += other.hessian_acc
        self.column_sq_norms += other.column_sq_norms
        self.sample_count += other.sample_count

    def column_norms(self) -> np.ndarray:
        return np.sqrt(self.column_sq_norms)

    def hessian(self) -> np.ndarray:
        """Hessian averaged over (sequence, step) samples, before dampening."""
        return self.hessian_acc / max(self.sample_count, 1)


def collect_activations(
    ckpt: NamedTensorCheckpoint,
    calib: CalibrationSet,
    timesteps: Sequence[int] = (),
    n_steps: int = 1,
    sink_profile: Optional[SinkProfile] = None,
    layers: Optional[Sequence[str]] = None,
) -> Dict[str, LayerActivationStats]:
    """Accumulate X^T X and column norms of each linear layer's input.

    With a sink profile, row j of every captured X is scaled by omega_j
    before accumulation.
    """
    omega = None
    if sink_profile is not None:
        omega = sink_profile.omega
        if omega.size != calib.seq_len:
            raise ProfileLengthMismatch(f"|omega|={omega.size} but S_cal={calib.seq_len}")
    names = list(layers) if layers is not None else prunable_names(ckpt.config)
    c_in = {n: ckpt.tensors[n].shape[1] for n in names}
    stats = {n: LayerActivationStats.empty(c_in[n], sink_masked=omega is not None) for n in names}
    for _, inp in calibration_inputs(ckpt, calib, timesteps, n_steps):
        res = forward(ckpt, inp, capture_attention=False, capture_activations=True)
        for n in names:
            stats[n].add(res.activations[n], omega)
    return stats
