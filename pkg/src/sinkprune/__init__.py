"""Sink-aware post-training pruning for toy diffusion and AR transformers."""

__version__ = "0.1.0"
