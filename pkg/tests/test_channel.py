import math

import numpy as np
import pytest

from rlfec.channel import (MARKOV_P, MARKOV_PE_VALUES, UNIFORM_PE_VALUES, FixedLoss, Link, LinkConfig,
                           MarkovLoss, Serializer, UniformLoss, birth_death_matrix,
                           check_transition_matrix, holding_time_sample, stationary_distribution)


def test_serialization_of_one_symbol():
    s = Serializer(10_000_000)
    start, end = s.send(0, 1026)
    # 8208 bits at 10 Mbps = 0.8208 ms, rounded up on departure
    assert start[0] == 0 and end[0] == 1
    link = Link(LinkConfig(), FixedLoss(0.0), np.random.default_rng(0))
    dep, arr, ok = link.transmit_down(0, 1)
    # last bit leaves at 0.8208 ms -> arrives at ceil(0.8208) + 1000
    assert dep[0] == 0 and arr[0] == 1001 and ok.all()


def test_serializer_does_not_truncate_cumulatively():
    s = Serializer(10_000_000)
    _, end = s.send(0, 1026, 1000)
    # 1000 symbols take exactly 820.8 ms
    assert end[-1] == 821
    assert s.busy_until_ms() == 821
    assert not s.idle_at(820) and s.idle_at(821)


def test_rate_must_be_whole_kbps():
    with pytest.raises(ValueError):
        LinkConfig(down_rate=10_000_001)


def test_lossless_link_delivers_everything():
    link = Link(LinkConfig(), FixedLoss(0.0), np.random.default_rng(1))
    _, _, ok = link.transmit_down(0, 5000)
    assert ok.all()


def test_erasure_fraction_within_binomial_bound():
    link = Link(LinkConfig(), FixedLoss(0.2), np.random.default_rng(2))
    _, _, ok = link.transmit_down(0, 100_000)
    assert abs((~ok).mean() - 0.2) < 0.004


def test_uniform_draw_frequencies():
    m = UniformLoss(np.random.default_rng(3), 10_000)
    vals = np.array([m.uniform_step() for _ in range(100_000)])
    for v in UNIFORM_PE_VALUES:
        assert abs((vals == v).mean() - 0.125) < 0.005


def test_uniform_changes_every_interval():
    m = UniformLoss(np.random.default_rng(4), 10_000)
    m.pe_at(95_000)
    assert m.change_times[:10] == [10_000 * k for k in range(10)]
    assert all(v in UNIFORM_PE_VALUES for v in m.values)


def test_transition_rows():
    assert np.allclose(MARKOV_P[0], [0.4, 0.6, 0, 0, 0, 0])
    assert np.allclose(MARKOV_P[2], [0, 0.4, 0.2, 0.4, 0, 0])
    assert np.array_equal(birth_death_matrix(6), MARKOV_P)
    check_transition_matrix(birth_death_matrix(5))
    with pytest.raises(ValueError):
        check_transition_matrix(np.full((3, 3), 1 / 3))


def test_stationary_distribution_closed_form():
    pi = stationary_distribution(MARKOV_P)
    assert np.allclose(pi, [0.125, 0.1875, 0.1875, 0.1875, 0.1875, 0.125], atol=1e-12)


def test_markov_occupancy_over_a_million_steps():
    m = MarkovLoss(np.random.default_rng(5), 10_000)
    counts = np.zeros(6)
    for _ in range(1_000_000):
        counts[m.markov_step()] += 1
    assert np.all(np.abs(counts / counts.sum() - [0.125, 0.1875, 0.1875, 0.1875, 0.1875, 0.125]) < 0.02)


def test_markov_moves_only_to_neighbours():
    m = MarkovLoss(np.random.default_rng(6), 10_000)
    m.pe_at(5_000_000)
    idx = [MARKOV_PE_VALUES.index(v) for v in m.values]
    assert max(abs(a - b) for a, b in zip(idx, idx[1:])) <= 1


@pytest.mark.parametrize("mean", [10_000, 1_200_000])
def test_holding_time_mean(mean):
    r = np.random.default_rng(7)
    x = np.array([holding_time_sample(r, mean) for _ in range(100_000)])
    assert abs(x.mean() / mean - 1) < 0.01
    assert x.min() >= 1


def test_short_holding_times_floor_at_one_ms():
    r = np.random.default_rng(8)
    assert min(holding_time_sample(r, 0.01) for _ in range(1000)) == 1


def test_loss_trace_is_policy_independent_function_of_seed(tmp_path):
    a = MarkovLoss(np.random.default_rng(9), 10_000)
    b = MarkovLoss(np.random.default_rng(9), 10_000)
    a.pe_at(50_000)
    b.pe_at(200_000)
    a.write_trace(tmp_path / "a.csv", until=50_000)
    b.write_trace(tmp_path / "b.csv", until=50_000)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_pe_at_many_matches_scalar():
    m = UniformLoss(np.random.default_rng(10), 700)
    t = np.arange(0, 20_000, 37)
    assert np.array_equal(m.pe_at_many(t), [m.pe_at(int(x)) for x in t])


def test_uplink_arrival():
    link = Link(LinkConfig(), FixedLoss(0.0), np.random.default_rng(0))
    # 40 B at 100 kbps = 3.2 ms, plus the one-way delay
    assert link.transmit_up(0, 40) == math.ceil(3.2) + 1000
