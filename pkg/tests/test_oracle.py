import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgne.oracle import (
    BatchSchedule,
    NoiseModel,
    OracleCounters,
    RngStreams,
    approx_pseudogradient_sa,
    approx_pseudogradient_saa,
    batch_size,
    empirical_error_stats,
)
from sgne.scenarios import build_illustrative, build_quadratic_kkt


@pytest.mark.parametrize(
    "sched,k,expected",
    [
        (BatchSchedule(c=1, k0=1, a=1), 0, 1),
        (BatchSchedule(c=1, k0=1, a=1), 2, 9),
        (BatchSchedule(c=0.5, k0=2, a=0.5), 10, 21),
        (BatchSchedule(c=1, k0=1, a=1, cap=16), 10, 16),
    ],
)
def test_batch_size_examples(sched, k, expected):
    assert batch_size(sched, k) == expected


def test_batch_size_rejects_negative_k():
    with pytest.raises(ValueError):
        batch_size(BatchSchedule(), -1)


@pytest.mark.parametrize("kw", [{"c": 0}, {"k0": -1}, {"a": 0}, {"cap": 0}])
def test_schedule_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        BatchSchedule(**kw)


@given(
    st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 2), st.one_of(st.none(), st.integers(1, 10_000))
)
@settings(max_examples=80, deadline=None)
def test_batch_schedule_invariants(c, k0, a, cap):
    s = BatchSchedule(c=c, k0=k0, a=a, cap=cap)
    sizes = [batch_size(s, k) for k in range(200)]
    assert all(v >= 1 for v in sizes)
    assert all(x <= y for x, y in zip(sizes, sizes[1:]))
    for k, v in enumerate(sizes):
        raw = c * (k + k0) ** (a + 1)
        want = max(1, math.ceil(raw - 1e-9 * max(raw, 1.0)))
        if cap is not None:
            want = min(want, cap)
        assert v == want


def test_noise_model_validation():
    NoiseModel(0.1, 0.2, 2)
    with pytest.raises(ValueError):
        NoiseModel(-1.0, 0.0)
    with pytest.raises(ValueError):
        NoiseModel(float("inf"), 0.0)


def test_streams_are_deterministic_and_distinct():
    s = RngStreams(7)
    a = s.stream(1, 5).normal(size=4)
    b = RngStreams(7).stream(1, 5).normal(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, s.stream(2, 5).normal(size=4))
    assert not np.array_equal(a, s.stream(1, 6).normal(size=4))
    assert not np.array_equal(a, s.stream(1, 5, call=1).normal(size=4))


def test_stream_independent_of_query_order():
    s = RngStreams(3)
    first = [s.stream(i, 4).normal() for i in range(5)]
    s2 = RngStreams(3)
    reversed_ = [s2.stream(i, 4).normal() for i in reversed(range(5))][::-1]
    assert first == reversed_


def test_saa_zero_variance_equals_exact():
    g = build_illustrative(sigma_noise=0.0)
    x = np.array([0.3, -1.2])
    est, calls = approx_pseudogradient_saa(g, x, 3, RngStreams(0), BatchSchedule())
    assert np.array_equal(est, g.exact_pseudogradient(x))
    assert calls == batch_size(BatchSchedule(), 3) * 2


def test_saa_large_batch_confidence_interval():
    g = build_illustrative(sigma_noise=0.5)
    x = np.array([1.0, 2.0])
    sched = BatchSchedule(c=10_000, k0=1, a=1e-12)
    est, calls = approx_pseudogradient_saa(g, x, 0, RngStreams(11), sched)
    assert calls == 2 * 10_000
    # per-sample std of R_i x_j is 0.5 |x_j|
    assert abs(est[0] - 2.0) <= 3 * 0.5 * 2.0 / 100
    assert abs(est[1] + 1.0) <= 3 * 0.5 * 1.0 / 100


def test_saa_with_unit_batch_equals_sa():
    g = build_illustrative(sigma_noise=0.3)
    x = np.array([0.5, 0.7])
    sa, _ = approx_pseudogradient_sa(g, x, 9, RngStreams(5))
    saa, _ = approx_pseudogradient_saa(g, x, 9, RngStreams(5), BatchSchedule(cap=1))
    assert np.array_equal(sa, saa)


def test_sa_degenerate_and_deterministic():
    g = build_illustrative(sigma_noise=0.0)
    x = np.array([2.0, 3.0])
    assert np.array_equal(approx_pseudogradient_sa(g, x, 0, RngStreams(1))[0], [3.0, -2.0])
    gn = build_illustrative(sigma_noise=1.0)
    a = approx_pseudogradient_sa(gn, x, 4, RngStreams(2))[0]
    b = approx_pseudogradient_sa(gn, x, 4, RngStreams(2))[0]
    assert np.array_equal(a, b)


def test_sa_unbiased():
    g = build_illustrative(sigma_noise=0.5)
    x = np.array([1.0, -2.0])
    streams = RngStreams(21)
    draws = np.array([approx_pseudogradient_sa(g, x, k, streams)[0] for k in range(100_000)])
    se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - g.exact_pseudogradient(x)) <= 3 * se)


def test_counters_track_calls():
    g = build_illustrative()
    c = OracleCounters()
    approx_pseudogradient_sa(g, np.ones(2), 0, RngStreams(0), counters=c)
    approx_pseudogradient_saa(g, np.ones(2), 2, RngStreams(0), BatchSchedule(c=1, k0=1, a=1), counters=c)
    assert c.snapshot() == (0, 2, 2 + 2 * 9)


def test_error_stats_additive_noise():
    g, _ = build_quadratic_kkt(n_players=3, seed=1, noise_std=0.4)
    x = np.zeros(3)
    stats = empirical_error_stats(g, x, None, 8, 1000, np.random.default_rng(0))
    expected = 3 * 0.4**2 / 8
    assert abs(stats.mse - expected) <= 0.2 * expected
    assert 3.2 <= stats.ratio_4x <= 4.8


def test_error_stats_zero_noise():
    g, _ = build_quadratic_kkt()
    stats = empirical_error_stats(g, np.ones(2), None, 4, 100, np.random.default_rng(0))
    assert stats.mse == 0.0 and stats.ratio_4x is None


def test_error_stats_bound_and_preconditions():
    g, ref = build_quadratic_kkt(noise_std=0.1)
    stats = empirical_error_stats(
        g, np.ones(2), ref.x, 10, 100, np.random.default_rng(0), NoiseModel(0.0, 0.1), constant=2.0
    )
    assert stats.bound == pytest.approx(2.0 * 0.01 / 10)
    with pytest.raises(ValueError):
        empirical_error_stats(g, np.ones(2), None, 4, 50, np.random.default_rng(0))


def test_zero_mean_error():
    g = build_illustrative(sigma_noise=0.7)
    x = np.array([0.4, -0.9])
    exact = g.exact_pseudogradient(x)
    streams = RngStreams(8)
    err = np.array([approx_pseudogradient_saa(g, x, 1, RngStreams(t), BatchSchedule())[0] - exact for t in range(10_000)])
    se = err.std(axis=0, ddof=1) / math.sqrt(len(err))
    assert np.all(np.abs(err.mean(axis=0)) <= 4 * se)
    del streams


def test_variance_scaling_across_batches():
    g, _ = build_quadratic_kkt(n_players=2, seed=3, noise_std=1.0)
    rng = np.random.default_rng(4)
    x = np.array([0.2, 0.1])
    scaled = [empirical_error_stats(g, x, None, S, 1000, rng).mse * S for S in (1, 4, 16, 64)]
    assert 0.5 <= max(scaled) / min(scaled) <= 2.0


@given(st.integers(0, 2**32 - 1), st.lists(st.tuples(st.integers(0, 5), st.integers(0, 10**6), st.integers(0, 3)), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_reused_generator_matches_fresh_stream(seed, keys):
    streams = RngStreams(seed)
    for agent, k, call in keys:
        fresh = streams.stream(agent, k, call).normal(size=7)
        again = streams.reuse(agent, k, call).normal(size=7)
        assert np.array_equal(fresh, again)
        # a partially consumed cached generator must still restart cleanly
        streams.reuse(agent, k, call).random(3)
        assert np.array_equal(streams.reuse(agent, k, call).normal(size=7), fresh)
