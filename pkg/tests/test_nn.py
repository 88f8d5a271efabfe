import numpy as np
import pytest

from rlfec.nn import Adam, DuelingNetwork, finite_diff_check


def test_dueling_combination():
    net = DuelingNetwork(None, hidden=4)
    net.params["bv"][...] = 1.0
    net.params["ba"][...] = [0.6, 0, 0, 0, 0, 0]
    assert np.allclose(net.forward(np.array([0.3, 1.0, 0.2])), [1.5, 0.9, 0.9, 0.9, 0.9, 0.9], atol=1e-12)
    net.params["bv"][...] = 0.0
    net.params["ba"][...] = 0.7
    assert np.allclose(net.forward(np.array([0.3, 1.0, 0.2])), 0.0)


def test_zero_network_outputs_zero():
    net = DuelingNetwork(None)
    assert np.array_equal(net.forward(np.random.default_rng(0).random(3)), np.zeros(6))


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        DuelingNetwork(np.random.default_rng(0)).forward(np.array([np.nan, 0, 0]))


def test_batch_matches_single():
    net = DuelingNetwork(np.random.default_rng(1))
    X = np.random.default_rng(2).random((5, 3))
    assert np.allclose(net.forward(X), np.stack([net.forward(x) for x in X]))


def test_gradient_zero_at_target():
    net = DuelingNetwork(np.random.default_rng(3))
    s = np.array([0.1, 1.0, 0.4])
    g = net.backward(s, 2, float(net.forward(s)[2]))
    assert all(np.abs(v).max() == 0 for v in g.values())


def test_untaken_advantages_get_only_mean_share():
    net = DuelingNetwork(np.random.default_rng(4))
    s = np.array([0.1, 1.0, 0.4])
    g = net.backward(s, 2, 5.0)
    ga = g["ba"]
    others = np.delete(ga, 2)
    # dQ_a/dA_j = -1/6 for j != a, 5/6 for j = a
    assert np.allclose(others, others[0]) and np.isclose(ga[2], -5 * others[0])


def test_finite_difference_random_pairs():
    r = np.random.default_rng(5)
    net = DuelingNetwork(r)
    worst = 0.0
    for _ in range(20):
        s = np.array([r.random(), float(r.integers(2)), r.random()])
        worst = max(worst, finite_diff_check(net, s, int(r.integers(6)), float(r.normal()), rng=r))
    assert worst < 1e-4


def test_finite_difference_at_zero_loss():
    net = DuelingNetwork(np.random.default_rng(6))
    s = np.array([0.3, 0.0, 0.7])
    _, abs_err = finite_diff_check(net, s, 1, float(net.forward(s)[1]), return_abs=True)
    assert abs_err < 1e-8


def test_adam_zero_gradient_is_a_no_op():
    net = DuelingNetwork(np.random.default_rng(7), hidden=8)
    before = {k: v.copy() for k, v in net.params.items()}
    opt = Adam(net.params)
    opt.update(net.params, {k: np.zeros_like(v) for k, v in net.params.items()})
    assert all(np.array_equal(before[k], net.params[k]) for k in before)


def test_adam_constant_gradient_steps_by_lr():
    p = {"w": np.zeros(4)}
    opt = Adam(p, lr=1e-3)
    for _ in range(100):
        opt.update(p, {"w": np.array([2.0, -0.5, 1e-3, -7.0])})
    assert np.allclose(p["w"], -1e-3 * 100 * np.sign([2.0, -0.5, 1e-3, -7.0]), rtol=1e-3)


def test_adam_shape_mismatch():
    p = {"w": np.zeros(4)}
    with pytest.raises(ValueError):
        Adam(p).update(p, {"w": np.zeros(3)})


def test_identical_runs_identical_parameters():
    def run():
        net = DuelingNetwork(np.random.default_rng(8), hidden=16)
        opt = Adam(net.params)
        r = np.random.default_rng(9)
        for _ in range(50):
            _, g = net.loss_and_grads(r.random((4, 3)), r.integers(6, size=4), r.random(4))
            opt.update(net.params, g)
        return net.params
    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)
