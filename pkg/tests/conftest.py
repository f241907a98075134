import numpy as np
import pytest

from sinkprune.calib import Corpus, tokenize
from sinkprune.model import ModelConfig, init_random_model

TEXT = (
    "the quick brown fox jumps over the lazy dog while the cat sleeps in the sun. "
    "pruning removes weights that matter least for the output of each layer. "
    "attention sinks collect a large share of attention without carrying much meaning. "
)


def random_stochastic(rng, S, causal=False):
    a = rng.random((S, S)) + 1e-3
    if causal:
        a = np.tril(a)
    return a / a.sum(axis=1, keepdims=True)


def random_spd(rng, n):
    g = rng.standard_normal((n, n))
    return g.T @ g + np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dlm_ckpt():
    return init_random_model(ModelConfig(mode="masked_diffusion", n_layers=2, n_heads=2, d_model=16, d_ff=32, vocab_size=257, max_seq_len=64, seed=7))


@pytest.fixture(scope="session")
def ar_ckpt():
    return init_random_model(ModelConfig(mode="autoregressive", n_layers=2, n_heads=2, d_model=16, d_ff=32, vocab_size=257, max_seq_len=64, seed=7))


@pytest.fixture(scope="session")
def corpus():
    docs = [tokenize(TEXT * 2), tokenize(TEXT[::-1] * 2)]
    return Corpus(docs, "byte", 257)


@pytest.fixture
def corpus_file(tmp_path):
    p = tmp_path / "corpus.txt"
    p.write_text((TEXT * 2) + "\n\n" + (TEXT[::-1] * 2) + "\n", encoding="utf-8")
    return p
