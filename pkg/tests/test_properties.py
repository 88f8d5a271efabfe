import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from rlfec.agent import ACTIONS, REWARD_MAX, REWARD_MIN, AgentState, build_state, compute_delta, compute_reward
from rlfec.channel import Serializer
from rlfec.fec import decode_matrix, redundancy_size
from rlfec.ltp import claims_from_mask, missing_from_claims, segment_block
from rlfec.policies import FAILED, RC_MAX, RC_MIN, STATUSES, FeedbackPolicy, clamp_rate
from rlfec.simcore import Simulator

statuses = st.sampled_from(STATUSES)


@given(st.lists(st.integers(0, 50), max_size=40))
def test_events_fire_in_time_then_insertion_order(delays):
    sim = Simulator()
    fired = []
    for k, d in enumerate(delays):
        sim.schedule(d, fired.append, (d, k))
    sim.run_until()
    assert fired == sorted(fired)


@given(st.integers(1, 5000), st.integers(1, 2000), st.integers(1, 50))
def test_serializer_busy_time_is_exact(size, count, now):
    s = Serializer(10_000_000)
    _, end = s.send(now, size, count)
    bits = size * 8 * count + now * 10_000
    assert end[-1] == -(-bits // 10_000)


@given(st.integers(1, 700_000), st.integers(64, 4096))
def test_segmentation_covers_the_block(payload, seg):
    segs = segment_block(0, payload, seg)
    assert sum(s.size for s in segs) == payload
    assert all(0 < s.size <= seg for s in segs)
    assert [s.is_checkpoint for s in segs].count(True) == 1 and segs[-1].is_checkpoint


@given(st.lists(st.booleans(), min_size=1, max_size=600))
def test_claims_complement_round_trip(mask):
    mask = np.array(mask)
    missing = missing_from_claims(claims_from_mask(mask), len(mask))
    assert missing == np.flatnonzero(~mask).tolist()


@given(st.integers(1, 512), st.sampled_from(ACTIONS))
def test_codeword_never_below_rate_or_above_cap(I, rc):
    N = redundancy_size(I, rc)
    assert N <= 768 and N > I
    assert N == 768 or I / N <= rc + 1e-12


@given(st.integers(1, 512), st.integers(0, 256), st.integers(0, 2**32 - 1))
def test_decode_status_consistent(I, extra, seed):
    N = I + extra
    r = np.random.default_rng(seed)
    mask = r.random(N) < r.random()
    status, idx = decode_matrix(mask, I)
    if status == FAILED:
        assert mask.sum() < I and len(idx) == mask[:I].sum()
    else:
        assert len(idx) == I


@given(st.floats(0, 1), statuses, st.integers(0, 768), st.integers(1, 768))
def test_feedback_estimate_stays_a_probability(pe0, status, rx, tot):
    rx = min(rx, tot)
    pol = FeedbackPolicy(pe_init=pe0)
    pol.start(0)
    d = pol.feedback_update(status, rx, tot, 1)
    assert 0.0 <= pol.p_e_est <= 1.0 and RC_MIN <= d.rc <= RC_MAX


@given(st.floats(0, 1), statuses, st.integers(1, 768), st.integers(0, 767), st.integers(0, 767))
def test_lower_success_never_raises_rate(pe0, status, tot, a, b):
    lo, hi = sorted((min(a, tot), min(b, tot)))
    rates = []
    for rx in (lo, hi):
        pol = FeedbackPolicy(pe_init=pe0)
        pol.start(0)
        rates.append(pol.feedback_update(status, rx, tot, 1).rc)
    assert rates[0] <= rates[1]


@given(st.floats(-2, 2))
def test_clamp_idempotent(x):
    assert clamp_rate(clamp_rate(x)) == clamp_rate(x)


@given(st.integers(0, 768), st.integers(1, 768), st.sampled_from(ACTIONS), statuses)
def test_reward_within_bounds(rx, tot, rc, status):
    rx = min(rx, tot)
    r = compute_reward(compute_delta(1 - rx / tot, rc), status)
    assert REWARD_MIN <= r <= REWARD_MAX


@settings(max_examples=200)
@given(st.floats(0, 1), st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 768),
       st.integers(1, 768), statuses)
def test_state_invariants(s1, t1, dt, rx, tot, status):
    rx = min(rx, tot)
    prev = AgentState(round(s1, 3), 1, t1)
    s = build_state(prev, t1, rx, tot, status, t1 + dt)
    assert 0 <= s.s1 <= 1 and s.s1 == round(s.s1, 3)
    assert s.s2 in (0, 1) and s.s3 >= dt
