"""End-to-end runs: sink analysis, two-pass calibration, pruning, evaluation.

The CLI is a thin layer over these functions; the demos call them directly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import __version__
from .calib import (
    CalibrationSet,
    Corpus,
    calibration_traces,
    collect_activations,
    sample_calibration,
)
from .errors import ConfigConflict
from .evaluate import evaluate, global_sparsity
from .model import AUTOREGRESSIVE, NamedTensorCheckpoint, decode_ar, denoise_diffusion
from .prune import PruneRequest, parse_pattern, prune_model, structured_head_prune
from .sinkstats import (
    SinkProfile,
    build_sink_profile,
    default_epsilon,
    default_tau,
    heatmap_rows,
    mass_series,
    temporal_variance,
    uniform_timesteps,
)


@dataclass
class RunConfig:
    criterion: str = "wanda"
    sink_aware: bool = False
    sparsity: float = 0.5
    pattern: str = "rowwise"
    epsilon: Optional[float] = None
    tau: Optional[float] = None
    tsteps: Optional[int] = None  # |T|, diffusion only
    steps: Optional[int] = None  # T, diffusion only
    calib_n: int = 32
    calib_len: int = 128
    eval_n: int = 8
    mask_ratio: float = 0.15
    blocksize: int = 32
    damp: float = 0.01
    tokenizer: str = "byte"
    omega_one: bool = False
    seed_model: int = 0
    seed_calib: int = 0
    seed_eval: int = 1

    def validate(self, mode: str) -> "RunConfig":
        pattern = parse_pattern(self.pattern)
        if mode == AUTOREGRESSIVE and (self.tsteps is not None or self.steps is not None):
            raise ConfigConflict("--tsteps/--steps are diffusion-only and not valid for AR models")
        if self.omega_one and not self.sink_aware:
            raise ConfigConflict("--omega-one only makes sense together with --sink-aware")
        if pattern.kind == "heads" and self.criterion != "wanda":
            raise ConfigConflict("head pruning is scored with Wanda; use --criterion wanda")
        if self.calib_n < 1 or self.calib_len < 2:
            raise ConfigConflict("need --calib-n >= 1 and --calib-len >= 2")
        if self.tsteps is not None and self.tsteps < 1 or self.steps is not None and self.steps < 1:
            raise ConfigConflict("--tsteps and --steps must be >= 1")
        return self

    @property
    def n_steps(self) -> int:
        return 32 if self.steps is None else self.steps

    @property
    def n_tsteps(self) -> int:
        return 8 if self.tsteps is None else self.tsteps

    def timesteps(self, mode: str) -> List[int]:
        if mode == AUTOREGRESSIVE:
            return []
        return uniform_timesteps(self.n_steps, self.n_tsteps)


def _calibration(corpus: Corpus, run: RunConfig) -> CalibrationSet:
    return sample_calibration(corpus, run.calib_n, run.calib_len, run.seed_calib)


def eval_set(corpus: Corpus, run: RunConfig) -> CalibrationSet:
    """Held-out windows that do not overlap any calibration window."""
    calib = _calibration(corpus, run)
    return sample_calibration(corpus, run.eval_n, run.calib_len, run.seed_eval, exclude=calib)


def _scales(ckpt: NamedTensorCheckpoint, run: RunConfig, seq_len: int):
    cfg = ckpt.config
    eps = run.epsilon if run.epsilon is not None else default_epsilon(cfg.n_layers, cfg.n_heads, seq_len)
    tau = run.tau if run.tau is not None else default_tau(cfg.n_layers, cfg.n_heads, seq_len)
    return eps, tau


def calibration_profile(ckpt: NamedTensorCheckpoint, calib: CalibrationSet, run: RunConfig):
    """Pass 1: sink profile and variance summary from the calibration inputs."""
    mode = ckpt.config.mode
    timesteps = run.timesteps(mode)
    traces = calibration_traces(ckpt, calib, timesteps, run.n_steps)
    eps, tau = _scales(ckpt, run, calib.seq_len)
    profile = build_sink_profile(traces, eps, tau, timestep_labels=timesteps or [0])
    return profile, traces


def prune_checkpoint(ckpt: NamedTensorCheckpoint, corpus: Corpus, run: RunConfig):
    """Two-pass sink-aware (or baseline) pruning. Returns (checkpoint, report)."""
    cfg = ckpt.config
    run.validate(cfg.mode)
    pattern = parse_pattern(run.pattern)
    calib = _calibration(corpus, run)
    timesteps = run.timesteps(cfg.mode)

    profile = None
    variance = None
    if run.sink_aware:
        if run.omega_one:
            profile = SinkProfile.identity(calib.seq_len)
        else:
            profile, traces = calibration_profile(ckpt, calib, run)
            variance = _mean_variance(traces, profile.epsilon * calib.seq_len)
    stats = collect_activations(ckpt, calib, timesteps, run.n_steps, sink_profile=profile)

    # forcing omega to 1 turns the run into the baseline; echo the effective settings
    effective_sink = run.sink_aware and not run.omega_one
    report = {
        "tool": {"name": "sinkprune", "version": __version__},
        "seeds": {"model": run.seed_model, "calib": run.seed_calib, "eval": run.seed_eval},
        "model": cfg.to_dict(),
        "config": {
            "criterion": run.criterion,
            "sink_aware": effective_sink,
            "sparsity": run.sparsity,
            "pattern": str(pattern),
            "damp": run.damp,
            "blocksize": run.blocksize,
            "epsilon": profile.epsilon if effective_sink else None,
            "tau": profile.tau if effective_sink else None,
            "timesteps": timesteps,
            "n_steps": run.n_steps if cfg.mode != AUTOREGRESSIVE else None,
            "calib_n": run.calib_n,
            "calib_len": run.calib_len,
            "tokenizer": run.tokenizer,
        },
        "sink_profile": profile.to_dict() if effective_sink else None,
        "variance": variance,
    }

    if pattern.kind == "heads":
        pruned, heads = structured_head_prune(ckpt, stats, pattern.ratio)
        report["structured"] = heads
        report["layers"] = []
    else:
        request = PruneRequest(
            criterion=run.criterion,
            sink_aware=run.sink_aware,
            sparsity=run.sparsity,
            pattern=pattern,
            damp=run.damp,
            blocksize=run.blocksize,
        )
        pruned, results = prune_model(ckpt, stats, request)
        report["layers"] = [
            {"name": r.name, "criterion": run.criterion, "sparsity": r.sparsity, "recon_error": r.recon_error}
            for r in results
        ]
    report["global_sparsity"] = global_sparsity(pruned)
    return pruned, report


def _mean_variance(traces, epsilon_sum: float) -> dict:
    reports = [temporal_variance(mass_series(t), epsilon_sum) for t in traces]
    return {
        "aggregation": "sum_over_queries",
        "epsilon": epsilon_sum,
        "spatial_variance": float(np.mean([r.spatial for r in reports])),
        "temporal_variance": float(np.mean([r.temporal for r in reports])),
    }


def generation_traces(ckpt: NamedTensorCheckpoint, calib: CalibrationSet, run: RunConfig, schedule="confidence"):
    """Generation runs seeded with the first half of each calibration window."""
    traces = []
    half = calib.seq_len // 2
    for n, seq in enumerate(calib.sequences):
        prompt, rest = seq[:half], calib.seq_len - half
        if ckpt.config.mode == AUTOREGRESSIVE:
            _, trace = decode_ar(ckpt, prompt, rest)
        else:
            _, trace = denoise_diffusion(ckpt, prompt, rest, run.n_steps, schedule, seed=run.seed_calib + n)
        traces.append(trace)
    return traces


@dataclass
class Analysis:
    variance: dict
    heatmap: list = field(default_factory=list)
    centroids: list = field(default_factory=list)
    profile: Optional[SinkProfile] = None


def analyze_traces(traces, epsilon_sum: float, n_layers: int, n_heads: int) -> Analysis:
    """Spatial/temporal variance (sum-over-queries masses) for a set of traces."""
    per_seq, centroid_rows = [], []
    for n, trace in enumerate(traces):
        rep = temporal_variance(mass_series(trace), epsilon_sum)
        per_seq.append({"spatial_variance": rep.spatial, "temporal_variance": rep.temporal})
        centroid_rows.extend((n, t, c) for t, c in enumerate(rep.centroids.tolist()))
    variance = {
        "aggregation": "sum_over_queries",
        "epsilon": epsilon_sum,
        "n_layers": n_layers,
        "n_heads": n_heads,
        "spatial_variance": float(np.mean([p["spatial_variance"] for p in per_seq])),
        "temporal_variance": float(np.mean([p["temporal_variance"] for p in per_seq])),
        "per_sequence": per_seq,
    }
    return Analysis(variance, heatmap_rows(traces[0]), centroid_rows)


def analyze_model(ckpt: NamedTensorCheckpoint, corpus: Corpus, run: RunConfig) -> Analysis:
    cfg = ckpt.config
    run.validate(cfg.mode)
    calib = _calibration(corpus, run)
    traces = generation_traces(ckpt, calib, run)
    eps, _ = _scales(ckpt, run, calib.seq_len)
    out = analyze_traces(traces, eps * calib.seq_len, cfg.n_layers, cfg.n_heads)
    out.profile, _ = calibration_profile(ckpt, calib, run)
    return out


def evaluate_checkpoint(ckpt: NamedTensorCheckpoint, corpus: Corpus, run: RunConfig) -> dict:
    held_out = eval_set(corpus, run)
    metrics = evaluate(ckpt, held_out, run.mask_ratio, run.seed_eval)
    metrics["eval_n"] = len(held_out)
    return metrics


def run_config_dict(run: RunConfig) -> dict:
    return asdict(run)
