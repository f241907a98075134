"""Toy pre-norm transformer with autoregressive and masked-diffusion modes.

The model is deliberately small and numpy-only. Every forward pass can hand
back the per-layer, per-head attention matrices and the exact inputs each
linear layer consumed, which is what the sink statistics and the pruning
criteria need.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import (
    InvalidConfig,
    InvalidSteps,
    SequenceTooLong,
    TokenOutOfRange,
    WrongMode,
)

AUTOREGRESSIVE = "autoregressive"
MASKED_DIFFUSION = "masked_diffusion"
MODES = (AUTOREGRESSIVE, MASKED_DIFFUSION)

LAYER_TENSORS = ("q_proj", "k_proj", "v_proj", "o_proj", "ff_up", "ff_down")
_GROUP = {
    "q_proj": "attn",
    "k_proj": "attn",
    "v_proj": "attn",
    "o_proj": "attn",
    "ff_up": "mlp",
    "ff_down": "mlp",
}


@dataclass(frozen=True)
class ModelConfig:
    mode: str = MASKED_DIFFUSION
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 32
    d_ff: int = 64
    vocab_size: int = 257
    max_seq_len: int = 256
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise InvalidConfig(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if self.vocab_size < 2:
            raise InvalidConfig("vocab_size must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must fit in an unsigned 64-bit integer")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def mask_id(self) -> Optional[int]:
        return self.vocab_size - 1 if self.mode == MASKED_DIFFUSION else None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d).validate()


def layer_tensor_name(layer: int, kind: str) -> str:
    return f"layer.{layer}.{_GROUP[kind]}.{kind}"


def prunable_names(config: ModelConfig) -> List[str]:
    """Linear layers eligible for pruning, in canonical order."""
    return [
        layer_tensor_name(i, kind)
        for i in range(config.n_layers)
        for kind in LAYER_TENSORS
    ]


def tensor_shapes(config: ModelConfig) -> Dict[str, tuple]:
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    shapes = {"embed": (v, d)}
    for i in range(config.n_layers):
        for kind in ("q_proj", "k_proj", "v_proj", "o_proj"):
            shapes[layer_tensor_name(i, kind)] = (d, d)
        shapes[layer_tensor_name(i, "ff_up")] = (f, d)
        shapes[layer_tensor_name(i, "ff_down")] = (d, f)
    shapes["unembed"] = (v, d)
    return shapes


@dataclass
class NamedTensorCheckpoint:
    """Model config plus float32 weight matrices keyed by canonical name.

    Linear weights are stored (out_features, in_features); a layer computes
    ``x @ W.T``.
    """

    config: ModelConfig
    tensors: Dict[str, np.ndarray]

    def __post_init__(self):
        self.config.validate()
        shapes = tensor_shapes(self.config)
        if set(shapes) != set(self.tensors):
            missing = sorted(set(shapes) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(shapes))
            raise InvalidConfig(f"tensor set mismatch: missing={missing} extra={extra}")
        ordered = {}
        for name, shape in shapes.items():
            t = np.ascontiguousarray(self.tensors[name], dtype=np.float32)
            if t.shape != shape:
                raise InvalidConfig(f"{name}: shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise InvalidConfig(f"{name}: non-finite weights")
            t.setflags(write=False)
            ordered[name] = t
        self.tensors = ordered

    def weight(self, name: str) -> np.ndarray:
        return self.tensors[name].astype(np.float64)

    def replace(self, updates: Dict[str, np.ndarray]) -> "NamedTensorCheckpoint":
        tensors = dict(self.tensors)
        tensors.update(updates)
        return NamedTensorCheckpoint(self.config, tensors)


def init_random_model(config: ModelConfig) -> NamedTensorCheckpoint:
    """Gaussian weights with std 1/sqrt(d_model), reproducible from ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    scale = 1.0 / math.sqrt(config.d_model)
    tensors = {
        name: (rng.standard_normal(shape) * scale).astype(np.float32)
        for name, shape in tensor_shapes(config).items()
    }
    return NamedTensorCheckpoint(config, tensors)


def position_encoding(seq_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    dims = np.arange(d_model)[None, :]
    rates = 1.0 / np.power(10000.0, (2 * (dims // 2)) / d_model)
    angles = pos * rates
    return np.where(dims % 2 == 0, np.sin(angles), np.cos(angles))


def _norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class ForwardResult:
    logits: np.ndarray
    attention: Optional[np.ndarray] = None  # (L, H, S, S)
    activations: Dict[str, np.ndarray] = field(default_factory=dict)  # name -> (S, C_in)

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.logits.shape[0])


def _check_tokens(config: ModelConfig, tokens) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise TokenOutOfRange("tokens must be a 1-D sequence")
    if tokens.size > config.max_seq_len:
        raise SequenceTooLong(f"length {tokens.size} exceeds max_seq_len {config.max_seq_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= config.vocab_size):
        raise TokenOutOfRange(f"token ids must lie in [0, {config.vocab_size})")
    return tokens


def forward(
    ckpt: NamedTensorCheckpoint,
    tokens: Sequence[int],
    capture_attention: bool = True,
    capture_activations: bool = False,
) -> ForwardResult:
    cfg = ckpt.config
    tokens = _check_tokens(cfg, tokens)
    S = tokens.size
    if S == 0:
        raise SequenceTooLong("empty sequence")
    H, dh = cfg.n_heads, cfg.head_dim
    w = ckpt.weight

    h = w("embed")[tokens] + position_encoding(S, cfg.d_model)
    causal = None
    if cfg.mode == AUTOREGRESSIVE:
        causal = np.triu(np.ones((S, S), dtype=bool), k=1)

    attn_all = np.empty((cfg.n_layers, H, S, S)) if capture_attention else None
    acts: Dict[str, np.ndarray] = {}

    for layer in range(cfg.n_layers):
        name = lambda kind: layer_tensor_name(layer, kind)  # noqa: E731
        a = _norm(h)
        q = (a @ w(name("q_proj")).T).reshape(S, H, dh).transpose(1, 0, 2)
        k = (a @ w(name("k_proj")).T).reshape(S, H, dh).transpose(1, 0, 2)
        v = (a @ w(name("v_proj")).T).reshape(S, H, dh).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
        if causal is not None:
            scores = np.where(causal[None], -np.inf, scores)
        probs = softmax(scores, axis=-1)
        if attn_all is not None:
            attn_all[layer] = probs
        ctx = (probs @ v).transpose(1, 0, 2).reshape(S, cfg.d_model)
        h = h + ctx @ w(name("o_proj")).T

        b = _norm(h)
        up = _gelu(b @ w(name("ff_up")).T)
        h = h + up @ w(name("ff_down")).T

        if capture_activations:
            for kind in ("q_proj", "k_proj", "v_proj"):
                acts[name(kind)] = a
            acts[name("o_proj")] = ctx
            acts[name("ff_up")] = b
            acts[name("ff_down")] = up

    logits = _norm(h) @ w("unembed").T
    return ForwardResult(logits, attn_all, acts)


@dataclass
class AttentionTrace:
    """Attention snapshots over generation steps.

    ``attention[t]`` has shape (L, H, S_t, S_t); ``tokens[t]`` is the input
    sequence the model saw at step t.
    """

    attention: List[np.ndarray] = field(default_factory=list)
    tokens: List[np.ndarray] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.attention)

    def seq_lens(self) -> List[int]:
        return [a.shape[-1] for a in self.attention]


def _greedy(logits_row: np.ndarray, exclude: Optional[int] = None) -> int:
    row = logits_row
    if exclude is not None:
        row = row.copy()
        row[exclude] = -np.inf
    return int(np.argmax(row))  # argmax returns the lowest id on ties


def decode_ar(ckpt: NamedTensorCheckpoint, prompt: Sequence[int], n_new: int):
    """Greedy left-to-right decoding; one trace step per emitted token."""
    cfg = ckpt.config
    if cfg.mode != AUTOREGRESSIVE:
        raise WrongMode("decode_ar needs an autoregressive model")
    if n_new < 0:
        raise InvalidSteps("n_new must be >= 0")
    seq = [int(t) for t in _check_tokens(cfg, prompt)]
    if n_new and not seq:
        raise SequenceTooLong("autoregressive decoding needs a non-empty prompt")
    trace = AttentionTrace()
    for _ in range(n_new):
        res = forward(ckpt, seq)
        trace.attention.append(res.attention)
        trace.tokens.append(np.array(seq, dtype=np.int64))
        seq.append(_greedy(res.logits[-1]))
    return np.array(seq, dtype=np.int64), trace


def denoise_diffusion(
    ckpt: NamedTensorCheckpoint,
    prompt: Sequence[int],
    gen_len: int,
    n_steps: int,
    schedule: str = "confidence",
    seed: int = 0,
):
    """Iterative unmasking of ``gen_len`` MASK slots appended to ``prompt``.

    At step t (of T) the model sees the whole sequence and commits
    ceil(remaining / (T - t)) masked positions. Committed tokens are frozen.
    """
    cfg = ckpt.config
    if cfg.mode != MASKED_DIFFUSION:
        raise WrongMode("denoise_diffusion needs a masked_diffusion model")
    if n_steps <= 0:
        raise InvalidSteps("n_steps must be >= 1")
    if schedule not in ("confidence", "random"):
        raise InvalidSteps(f"unknown schedule {schedule!r}")
    if gen_len < 0:
        raise InvalidSteps("gen_len must be >= 0")
    mask_id = cfg.mask_id
    seq = np.concatenate([_check_tokens(cfg, prompt), np.full(gen_len, mask_id, dtype=np.int64)])
    _check_tokens(cfg, seq)
    rng = np.random.default_rng(seed)
    trace = AttentionTrace()

    for t in range(n_steps):
        res = forward(ckpt, seq)
        trace.attention.append(res.attention)
        trace.tokens.append(seq.copy())
        masked = np.flatnonzero(seq == mask_id)
        masked = masked[masked >= seq.size - gen_len]
        if masked.size == 0:
            continue
        n_commit = -(-masked.size // (n_steps - t))
        logits = res.logits[masked].copy()
        logits[:, mask_id] = -np.inf
        probs = softmax(logits, axis=-1)
        preds = np.argmax(probs, axis=-1)
        if schedule == "confidence":
            conf = probs.max(axis=-1)
            order = np.argsort(-conf, kind="stable")
            chosen = order[:n_commit]
        else:
            chosen = rng.choice(masked.size, size=n_commit, replace=False)
        seq[masked[chosen]] = preds[chosen]

    return seq, trace
