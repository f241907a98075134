"""
Where does attention pile up?
=============================

Incoming attention mass, hard and soft sink tests, and the spatial /
temporal variance summaries, first on scripted traces and then on a real
(random) diffusion model.
"""

# %%
import numpy as np

from sinkprune.model import ModelConfig, denoise_diffusion, init_random_model
from sinkprune.sinkstats import (
    aggregate_mass,
    default_epsilon,
    default_tau,
    detect_sinks,
    mass_series,
    soft_sink_score,
    temporal_variance,
)
from sinkprune.synthetic import drifting_sink_trace, stationary_sink_trace

np.set_printoptions(precision=3, suppress=True)

# %% A causal trace whose queries all lean on position 0.
S = 10
stationary = stationary_sink_trace(n_steps=8, seq_len=S)
m = aggregate_mass(stationary.attention[0])
print("mean-over-queries mass:", m)
eps, tau = default_epsilon(1, 1, S), default_tau(1, 1, S)
print("hard sinks:", detect_sinks(m, eps))
print("soft scores:", soft_sink_score(m, eps, tau))

# %% The same summaries for a sink that walks across the sequence.
drifting = drifting_sink_trace(n_steps=8, seq_len=S)
for name, trace in [("stationary", stationary), ("drifting", drifting)]:
    rep = temporal_variance(mass_series(trace), eps * S)
    print(f"{name:>10}: spatial={rep.spatial:8.3f}  temporal={rep.temporal:6.2f}  centroids={rep.centroids}")

# %% A randomly initialised diffusion model has no trained sinks, but the
# bookkeeping is identical.
ckpt = init_random_model(ModelConfig(mode="masked_diffusion", n_layers=2, n_heads=2, d_model=16, d_ff=32, max_seq_len=32, seed=0))
_, trace = denoise_diffusion(ckpt, prompt=list(b"sink"), gen_len=12, n_steps=6)
rep = temporal_variance(mass_series(trace), default_epsilon(2, 2, 16) * 16)
print("model trace: spatial=%.3f temporal=%.3f" % (rep.spatial, rep.temporal))
print("sink sets per step:", [s.tolist() for s in rep.sink_sets])
