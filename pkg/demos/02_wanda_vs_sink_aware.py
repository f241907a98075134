"""
Wanda with and without sink down-weighting
==========================================

The sink-aware variant only changes the activation statistics: every
calibration position j is scaled by omega_j = 1 - phi_bar_j before the
column norms are accumulated. Positions that behave like sinks therefore
count for less when deciding which weights matter.
"""

# %%
import numpy as np

from sinkprune.calib import Corpus, collect_activations, sample_calibration, tokenize
from sinkprune.model import ModelConfig, init_random_model
from sinkprune.pipeline import RunConfig, calibration_profile
from sinkprune.prune import PruneRequest, prune_model

np.set_printoptions(precision=3, suppress=True)

text = "the model keeps the weights whose inputs carry the most signal. " * 8
corpus = Corpus([tokenize(text)])
ckpt = init_random_model(ModelConfig(mode="masked_diffusion", n_layers=2, n_heads=2, d_model=16, d_ff=32, max_seq_len=64, seed=1))

# %% Pass one: a sink profile from noised calibration inputs.
run = RunConfig(calib_n=6, calib_len=24, steps=8, tsteps=4)
calib = sample_calibration(corpus, run.calib_n, run.calib_len, run.seed_calib)
profile, _ = calibration_profile(ckpt, calib, run)
print("phi_bar:", profile.phi_bar)
print("omega:  ", profile.omega)

# %% Pass two: statistics with and without omega, then prune at 50%.
steps = run.timesteps(ckpt.config.mode)
plain = collect_activations(ckpt, calib, steps, run.n_steps)
weighted = collect_activations(ckpt, calib, steps, run.n_steps, profile)
base, _ = prune_model(ckpt, plain, PruneRequest("wanda", sparsity=0.5))
aware, _ = prune_model(ckpt, weighted, PruneRequest("wanda", sink_aware=True, sparsity=0.5))

for name in plain:
    a = base.tensors[name] != 0
    b = aware.tensors[name] != 0
    print(f"{name:24s} masks differ on {np.mean(a != b):6.1%} of entries")
