import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sinkprune.errors import (
    DegenerateSequence,
    EmptyTimestepSet,
    MixedSequenceLengths,
    NotRowStochastic,
    ShapeMismatch,
)
from sinkprune.model import AttentionTrace
from sinkprune.sinkstats import (
    MassSeries,
    SinkProfile,
    aggregate_mass,
    average_sink_score,
    build_sink_profile,
    cumulative_attention,
    detect_sinks,
    heatmap_rows,
    incoming_mass,
    mass_series,
    soft_sink_score,
    spatial_variance,
    temporal_variance,
    uniform_timesteps,
)
from sinkprune.synthetic import drifting_sink_trace, stationary_sink_trace, uniform_trace

from conftest import random_stochastic


def sig(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


masses = st.lists(st.floats(0, 50, allow_nan=False), min_size=2, max_size=12)


# incoming mass / cumulative attention


def test_incoming_identity():
    np.testing.assert_array_equal(incoming_mass(np.eye(3)), [1, 1, 1])


def test_incoming_single_sink():
    a = np.array([[1.0, 0, 0]] * 3)
    np.testing.assert_array_equal(incoming_mass(a), [3, 0, 0])


def test_incoming_matches_entrywise_sum(rng):
    a = random_stochastic(rng, 5)
    oracle = [sum(a[j][i] for j in range(5)) for i in range(5)]
    np.testing.assert_allclose(incoming_mass(a), oracle, rtol=1e-12)
    assert abs(incoming_mass(a).sum() - 5) <= 1e-5


def test_not_row_stochastic():
    with pytest.raises(NotRowStochastic):
        incoming_mass(np.ones((3, 3)))


def test_cumulative_examples():
    np.testing.assert_allclose(cumulative_attention(np.eye(4)), [0.25] * 4)
    np.testing.assert_allclose(cumulative_attention([[1.0, 0.0], [1.0, 0.0]]), [1.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(S=st.integers(1, 10), seed=st.integers(0, 2**32 - 1))
def test_cumulative_times_S_is_incoming(S, seed):
    a = random_stochastic(np.random.default_rng(seed), S)
    np.testing.assert_allclose(S * cumulative_attention(a), incoming_mass(a), rtol=1e-12)


# aggregation


def test_aggregate_degenerate(rng):
    a = random_stochastic(rng, 4)
    np.testing.assert_allclose(aggregate_mass(a[None, None]), cumulative_attention(a))


def test_aggregate_identity_2x2():
    step = np.broadcast_to(np.eye(3), (2, 2, 3, 3))
    np.testing.assert_allclose(aggregate_mass(step), [4 / 3] * 3)


def test_aggregate_list_of_layers(rng):
    layers = [np.stack([random_stochastic(rng, 4) for _ in range(3)]) for _ in range(2)]
    np.testing.assert_allclose(aggregate_mass(layers), aggregate_mass(np.stack(layers)))


def test_aggregate_shape_mismatch(rng):
    layers = [np.stack([random_stochastic(rng, 4)] * 2), np.stack([random_stochastic(rng, 5)] * 2)]
    with pytest.raises(ShapeMismatch):
        aggregate_mass(layers)


@settings(max_examples=50, deadline=None)
@given(L=st.integers(1, 3), H=st.integers(1, 3), S=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_mass_conservation(L, H, S, seed):
    rng = np.random.default_rng(seed)
    step = np.stack([np.stack([random_stochastic(rng, S) for _ in range(H)]) for _ in range(L)])
    assert abs(aggregate_mass(step).sum() - L * H) <= 1e-4


# hard / soft sinks


def test_detect_uniform():
    assert detect_sinks([2.0, 2.0, 2.0, 2.0], 0.1).size == 0


def test_detect_examples():
    assert list(detect_sinks([3.0, 0.0, 0.0], 0.1)) == [0]
    assert list(detect_sinks([1.0, 1.0, 1.000001], 0.0)) == [2]


def test_detect_degenerate():
    with pytest.raises(DegenerateSequence):
        detect_sinks([1.0], 0.1)
    with pytest.raises(DegenerateSequence):
        soft_sink_score([1.0], 0.1, 1.0)


def test_soft_examples():
    np.testing.assert_allclose(soft_sink_score([1.0, 1.0, 1.0], 0.1, 1.0), [sig(-0.1)] * 3, rtol=1e-12)
    assert round(sig(-0.1), 4) == 0.4750
    phi = soft_sink_score([3.0, 0.0, 0.0], 0.1, 1.0)
    assert phi[0] == pytest.approx(sig(2.9), rel=1e-12)
    assert round(phi[0], 4) == 0.9478


def brute_soft(m, eps, tau):
    out = []
    for j in range(len(m)):
        others = [m[k] for k in range(len(m)) if k != j]
        out.append(sig((m[j] - sum(others) / len(others) - eps) / tau))
    return out


@settings(max_examples=100, deadline=None)
@given(m=masses, eps=st.floats(0, 5), tau=st.floats(0.05, 10))
def test_soft_matches_brute_force(m, eps, tau):
    np.testing.assert_allclose(soft_sink_score(m, eps, tau), brute_soft(m, eps, tau), rtol=1e-9, atol=1e-300)


@settings(max_examples=200, deadline=None)
@given(m=masses, eps=st.floats(0, 5), tau=st.floats(0.05, 10))
def test_hard_soft_agree(m, eps, tau):
    m = np.array(m)
    excess = m - (m.sum() - m) / (m.size - 1) - eps
    assume(np.all(np.abs(excess) > 1e-9 * tau))
    hard = set(detect_sinks(m, eps).tolist())
    soft = set(np.flatnonzero(soft_sink_score(m, eps, tau) > 0.5).tolist())
    assert hard == soft


@settings(max_examples=100, deadline=None)
@given(m=masses, lam=st.floats(1.0, 20.0))
def test_scaling_never_removes_sinks(m, lam):
    m = np.array(m)
    excess = m - (m.sum() - m) / (m.size - 1)
    assume(np.all(np.abs(excess) > 1e-9 * max(1.0, m.max())))
    before = set(detect_sinks(m, 0.0).tolist())
    assert before <= set(detect_sinks(lam * m, 0.0).tolist())


@settings(max_examples=50, deadline=None)
@given(m=masses, j=st.integers(0, 11), bump=st.floats(0.01, 5), eps=st.floats(0, 2))
def test_soft_monotone(m, j, bump, eps):
    j = j % len(m)
    m2 = list(m)
    m2[j] += bump
    assert soft_sink_score(m2, eps, 1.0)[j] >= soft_sink_score(m, eps, 1.0)[j]


# averaging


def test_average_examples(rng):
    phi = rng.random(5)
    np.testing.assert_array_equal(average_sink_score([phi]), phi)
    assert average_sink_score([[0.2], [0.8]])[0] == pytest.approx(0.5)
    steps = [rng.random(6) for _ in range(5)]
    oracle = [sum(s[k] for s in steps) / 5 for k in range(6)]
    np.testing.assert_allclose(average_sink_score(steps), oracle, atol=1e-12)


def test_average_empty():
    with pytest.raises(EmptyTimestepSet):
        average_sink_score([])


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_average_within_range(T, seed):
    steps = np.random.default_rng(seed).random((T, 5))
    phi = average_sink_score(list(steps))
    assert np.all(phi >= steps.min(0) - 1e-15) and np.all(phi <= steps.max(0) + 1e-15)


# variance statistics


def test_spatial_uniform():
    assert spatial_variance(mass_series(uniform_trace(4, 6))) == pytest.approx(0.0, abs=1e-24)


def test_spatial_example():
    assert spatial_variance(MassSeries([np.array([3.0, 0.0, 0.0])])) == pytest.approx(2.0)


def test_spatial_permutation_invariant(rng):
    ms = [rng.random(7) for _ in range(3)]
    perm = rng.permutation(7)
    a = spatial_variance(MassSeries(ms))
    b = spatial_variance(MassSeries([m[perm] for m in ms]))
    assert a == pytest.approx(b, rel=1e-12)


def test_spatial_pads_ar_growth():
    series = MassSeries([np.array([2.0, 0.0]), np.array([2.0, 1.0, 0.0])])
    mbar = [2.0, 0.5, 0.0]
    mu = sum(mbar) / 3
    assert spatial_variance(series) == pytest.approx(sum((x - mu) ** 2 for x in mbar) / 3)


def test_temporal_stationary():
    rep = temporal_variance(MassSeries([np.array([3.0, 0.0, 0.0])] * 5), 0.1)
    assert list(rep.centroids) == [0.0] * 5
    assert rep.temporal == 0.0


def test_temporal_two_positions():
    a = np.zeros(11)
    a[0] = 5.0
    b = np.zeros(11)
    b[10] = 5.0
    rep = temporal_variance(MassSeries([a, b] * 3), 0.1)
    assert rep.temporal == pytest.approx(25.0)


def test_temporal_empty_set_falls_back_to_argmax():
    rep = temporal_variance(MassSeries([np.array([1.0, 1.0, 1.0]), np.array([1.0, 2.0, 2.0])]), 5.0)
    assert list(rep.centroids) == [0.0, 1.0]
    assert all(s.size == 0 for s in rep.sink_sets)


def brute_temporal(series, eps):
    cs = []
    for m in series:
        S = len(m)
        sinks = [j for j in range(S) if m[j] > sum(m[k] for k in range(S) if k != j) / (S - 1) + eps]
        if sinks:
            cs.append(sum(m[i] * i for i in sinks) / sum(m[i] for i in sinks))
        else:
            cs.append(float(max(range(S), key=lambda i: (m[i], -i))))
    mu = sum(cs) / len(cs)
    return sum((c - mu) ** 2 for c in cs) / len(cs)


def brute_spatial(series):
    T, S = len(series), len(series[0])
    mbar = [sum(series[t][i] for t in range(T)) / T for i in range(S)]
    mu = sum(mbar) / S
    return sum((x - mu) ** 2 for x in mbar) / S


@settings(max_examples=100, deadline=None)
@given(T=st.integers(1, 6), S=st.integers(2, 9), seed=st.integers(0, 2**32 - 1), eps=st.floats(0, 1))
def test_variances_match_brute_force(T, S, seed, eps):
    rng = np.random.default_rng(seed)
    series = [incoming_mass(random_stochastic(rng, S)) for _ in range(T)]
    rep = temporal_variance(MassSeries(series), eps)
    assert rep.temporal == pytest.approx(brute_temporal(series, eps), rel=1e-9, abs=1e-12)
    assert rep.spatial == pytest.approx(brute_spatial(series), rel=1e-9, abs=1e-15)
    assert rep.temporal == pytest.approx(float(np.var(rep.centroids)), abs=1e-9)


def test_drifting_beats_stationary():
    eps = 0.5
    stat = temporal_variance(mass_series(stationary_sink_trace(12, 12)), eps)
    drift = temporal_variance(mass_series(drifting_sink_trace(12, 12)), eps)
    assert drift.temporal > stat.temporal
    assert drift.spatial < stat.spatial


# profiles


def test_uniform_timesteps():
    assert uniform_timesteps(32, 8) == [4, 8, 12, 16, 20, 24, 28, 32]
    assert uniform_timesteps(5, 1) == [5]


def test_profile_single_step(rng):
    step = np.stack([np.stack([random_stochastic(rng, 6) for _ in range(2)]) for _ in range(2)])
    trace = AttentionTrace([step])
    prof = build_sink_profile([trace], epsilon=0.2, tau=0.7)
    np.testing.assert_allclose(prof.phi_bar, soft_sink_score(aggregate_mass(step), 0.2, 0.7))
    np.testing.assert_array_equal(prof.omega, 1.0 - prof.phi_bar)


def test_profile_uniform_attention():
    L, H, S = 2, 3, 8
    traces = [uniform_trace(4, S, L, H) for _ in range(3)]
    prof = build_sink_profile(traces, epsilon=0.3, tau=0.5)
    np.testing.assert_allclose(prof.omega, [1 - sig(-0.3 / 0.5)] * S, rtol=1e-12)


def test_profile_defaults_scale():
    prof = build_sink_profile([uniform_trace(2, 8, 2, 2)])
    assert prof.tau == pytest.approx(0.5)
    assert prof.epsilon == pytest.approx(0.25)


def test_profile_selects_steps():
    t = stationary_sink_trace(3, 6)
    t.attention[1] = uniform_trace(1, 6).attention[0]
    p_all = build_sink_profile([t], 0.1, 0.5)
    p_one = build_sink_profile([t], 0.1, 0.5, steps=[1])
    assert p_one.timestep_set == [1]
    np.testing.assert_allclose(p_one.phi_bar, soft_sink_score(np.full(6, 1 / 6), 0.1, 0.5))
    assert not np.allclose(p_all.phi_bar, p_one.phi_bar)


def test_profile_mixed_lengths():
    with pytest.raises(MixedSequenceLengths):
        build_sink_profile([uniform_trace(1, 5), uniform_trace(1, 6)])


def test_profile_empty():
    with pytest.raises(EmptyTimestepSet):
        build_sink_profile([])
    with pytest.raises(EmptyTimestepSet):
        build_sink_profile([uniform_trace(2, 4)], steps=[])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_profile_omega_plus_phi(seed):
    rng = np.random.default_rng(seed)
    trace = AttentionTrace([random_stochastic(rng, 5)[None, None] for _ in range(3)])
    prof = build_sink_profile([trace])
    assert np.array_equal(prof.omega, 1.0 - prof.phi_bar)
    assert np.all((prof.omega >= 0) & (prof.omega <= 1))


def test_identity_profile():
    p = SinkProfile.identity(4)
    assert np.array_equal(p.omega, np.ones(4))


def test_heatmap_rows():
    rows = heatmap_rows(uniform_trace(2, 3, 2, 1))
    assert len(rows) == 2 * 2 * 1 * 3
    assert rows[0] == (0, 0, 0, 0, pytest.approx(1.0))
