"""
Removing whole attention heads
==============================

Each head is scored by the Wanda scores of its query/key/value rows and
output-projection columns; the lowest floor(H * r) heads in every layer are
zeroed.
"""

# %%
import numpy as np

from sinkprune.calib import Corpus, collect_activations, sample_calibration, tokenize
from sinkprune.evaluate import global_sparsity
from sinkprune.model import ModelConfig, init_random_model
from sinkprune.prune import structured_head_prune

corpus = Corpus([tokenize("heads that contribute little can go. " * 10)])
ckpt = init_random_model(ModelConfig(mode="masked_diffusion", n_layers=2, n_heads=4, d_model=16, d_ff=32, max_seq_len=64, seed=3))
stats = collect_activations(ckpt, sample_calibration(corpus, 4, 20, seed=0), [2, 4], 4)

# %%
for ratio in (0.3, 0.5):
    pruned, layers = structured_head_prune(ckpt, stats, ratio)
    print(f"ratio {ratio}: global sparsity {global_sparsity(pruned):.3f}")
    for info in layers:
        scores = np.round(info["head_scores"], 2)
        print(f"  layer {info['layer']}: scores {scores}, pruned {info['pruned_heads']}")
