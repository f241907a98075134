"""
Masked diffusion decoding, step by step
=======================================

The generation region starts fully masked. Each of the T steps commits
ceil(remaining / steps_left) positions, chosen by confidence or at random,
and committed tokens never change again.
"""

# %%
import numpy as np

from sinkprune.model import ModelConfig, decode_ar, denoise_diffusion, init_random_model

cfg = ModelConfig(mode="masked_diffusion", n_layers=2, n_heads=2, d_model=16, d_ff=32, max_seq_len=32, seed=5)
ckpt = init_random_model(cfg)
prompt = list(b"abc")

# %%
seq, trace = denoise_diffusion(ckpt, prompt, gen_len=7, n_steps=4, schedule="confidence")
for t, tokens in enumerate(trace.tokens + [seq]):
    row = "".join("_" if tok == cfg.mask_id else "x" for tok in tokens)
    print(f"step {t}: {row}")

# %% Every attention row is a distribution; diffusion attention is bidirectional.
A = trace.attention[0]
print("row sums within", np.abs(A.sum(-1) - 1).max(), "of 1; min weight", A.min())

# %% An AR model grows its sequence instead and never looks ahead.
ar = init_random_model(ModelConfig(mode="autoregressive", n_layers=2, n_heads=2, d_model=16, d_ff=32, max_seq_len=32, seed=5))
out, ar_trace = decode_ar(ar, prompt, 4)
print("AR lengths per step:", ar_trace.seq_lens())
print("mass above the diagonal:", max(np.triu(a, 1).sum() for a in ar_trace.attention))
