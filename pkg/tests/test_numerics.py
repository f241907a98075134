import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinkprune.errors import DimensionMismatch, NotPositiveDefinite
from sinkprune.numerics import cholesky, masked_least_squares, psd_inverse

from conftest import random_spd


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(3)).lower, np.eye(3))


def test_cholesky_2x2():
    L = cholesky([[4.0, 2.0], [2.0, 3.0]]).lower
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)
    # multiplication oracle, written out entrywise
    prod = [[sum(L[i][k] * L[j][k] for k in range(2)) for j in range(2)] for i in range(2)]
    np.testing.assert_allclose(prod, [[4, 2], [2, 3]], atol=1e-14)


def test_cholesky_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, 2.0], [2.0, 1.0]])


def test_cholesky_nonsquare():
    with pytest.raises(DimensionMismatch):
        cholesky(np.ones((2, 3)))


def test_cholesky_asymmetric():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[2.0, 1.0], [0.0, 2.0]])


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 24), seed=st.integers(0, 2**32 - 1))
def test_cholesky_reconstructs(n, seed):
    a = random_spd(np.random.default_rng(seed), n)
    L = cholesky(a).lower
    assert np.allclose(np.triu(L, 1), 0)
    assert np.all(np.diag(L) > 0)
    assert np.linalg.norm(L @ L.T - a) / np.linalg.norm(a) <= 1e-8


def test_psd_inverse_examples():
    np.testing.assert_allclose(psd_inverse(np.eye(4)), np.eye(4))
    np.testing.assert_allclose(psd_inverse(np.diag([2.0, 5.0])), np.diag([0.5, 0.2]), atol=1e-15)


def test_psd_inverse_multiplies_back(rng):
    a = random_spd(rng, 8)
    assert np.max(np.abs(a @ psd_inverse(a) - np.eye(8))) <= 1e-6


def test_psd_inverse_256(rng):
    a = random_spd(rng, 256)
    assert np.max(np.abs(a @ psd_inverse(a) - np.eye(256))) <= 1e-6


def test_psd_inverse_singular():
    with pytest.raises(NotPositiveDefinite):
        psd_inverse(np.zeros((3, 3)))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 64), seed=st.integers(0, 2**32 - 1))
def test_psd_inverse_involution(n, seed):
    a = random_spd(np.random.default_rng(seed), n)
    back = psd_inverse(psd_inverse(a))
    assert np.linalg.norm(back - a) / np.linalg.norm(a) <= 1e-5


def test_mls_identity_design():
    np.testing.assert_allclose(masked_least_squares(np.eye(2), [3.0, 7.0]), [3.0, 7.0])


def test_mls_masked_row():
    # surviving row (1, 1) against target (2, 2): normal equation 2 w = 4
    w = masked_least_squares([[1.0, 1.0], [0.0, 0.0]], [2.0, 2.0], keep=[True, False])
    np.testing.assert_allclose(w, [2.0, 0.0])


def test_mls_zero_target(rng):
    x = rng.standard_normal((4, 10))
    np.testing.assert_array_equal(masked_least_squares(x, np.zeros(10)), np.zeros(4))


def test_mls_singular_without_damp():
    with pytest.raises(NotPositiveDefinite):
        masked_least_squares([[1.0, 1.0], [0.0, 0.0]], [2.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_mls_normal_equations(k, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((8, 40))
    keep = np.zeros(8, dtype=bool)
    keep[rng.choice(8, size=k, replace=False)] = True
    t = rng.standard_normal(8) @ x
    w = masked_least_squares(x, t, keep)
    xk = x[keep]
    assert np.all(w[~keep] == 0)
    assert np.max(np.abs(xk @ xk.T @ w[keep] - xk @ t)) <= 1e-6
