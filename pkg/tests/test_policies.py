import pytest

from rlfec.policies import (FAILED, NOT_DECODED, RC_MAX, RC_MIN, SUCCESS, FeedbackPolicy, FixedPolicy,
                            clamp_rate, compute_ps, compute_weight)


def test_success_probability():
    assert compute_ps(80, 100) == 0.8
    assert compute_ps(100, 100) == 1.0
    assert compute_ps(0, 596) == 0.0
    with pytest.raises(ValueError):
        compute_ps(0, 0)


def test_weight():
    assert compute_weight(SUCCESS, 100) == 0.5
    assert abs(compute_weight(NOT_DECODED, 40) - 0.4) < 1e-12
    assert compute_weight(FAILED, 596) == 1.0
    with pytest.raises(ValueError):
        compute_weight("Lost", 10)


@pytest.mark.parametrize("pe_old,status,rx,tot,pe_new,rc", [
    (0.0, SUCCESS, 80, 100, 0.1, 0.885),  # 1 - 0.115 already sits below 8/9
    (0.2, FAILED, 60, 100, 0.4, 2 / 3),
    (0.1, NOT_DECODED, 596, 596, 0.05, 8 / 9),
])
def test_feedback_update_chain(pe_old, status, rx, tot, pe_new, rc):
    pol = FeedbackPolicy(1.15, pe_init=pe_old)
    pol.start(0)
    d = pol.feedback_update(status, rx, tot, 10)
    assert abs(pol.p_e_est - pe_new) < 1e-12
    assert abs(d.rc - rc) < 1e-12
    assert d.action_id == 1


def test_unclamped_rate():
    pol = FeedbackPolicy(1.15, pe_init=0.0)
    pol.start(0)
    d = pol.feedback_update(SUCCESS, 300, 400, 1)  # p_e = 0.125
    assert abs(d.rc - (1 - 0.125 * 1.15)) < 1e-12


def test_fixed_policy():
    assert FixedPolicy(2 / 3).start(0).rc == 2 / 3
    assert FixedPolicy(0.9).start(0).rc == RC_MAX
    assert abs(FixedPolicy(1 - 0.20 * 1.15).start(0).rc - 0.77) < 1e-12
    assert FixedPolicy(0.77).on_feedback(None, 5) is None


def test_clamp_idempotent():
    for x in (0.1, 0.7, 0.95):
        assert clamp_rate(clamp_rate(x)) == clamp_rate(x)
    assert clamp_rate(0.1) == RC_MIN


def test_geometric_convergence_on_success_feedback():
    pol = FeedbackPolicy()
    pol.start(0)
    for k in range(1, 30):
        pol.feedback_update(SUCCESS, 400, 500, k)
        assert abs(pol.p_e_est - 0.2) <= 0.2 * 0.5 ** k + 1e-12
