import numpy as np
import pytest

from smdpcache.nn import (
    Adam,
    DivergenceError,
    Mlp,
    apply_update,
    forward,
    gradients,
    load_checkpoint,
    log_softmax,
    save_checkpoint,
    softmax,
)


def fd_check(net, x, upstream, eps=1e-6):
    """Largest relative error between backward() and central differences."""
    analytic = net.backward(x, upstream)
    worst = 0.0
    for p, g in zip(net.params, analytic):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            up = np.sum(upstream * net.raw(x))
            p[i] = old - eps
            down = np.sum(upstream * net.raw(x))
            p[i] = old
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(num - g[i]) / max(1e-6, abs(num) + abs(g[i])))
    return worst


def test_hand_computed_forward():
    net = Mlp([1, 1, 1, 1], rng=0, init_range=0.0, bias_init=0.1)
    assert net.forward(np.zeros(1)).tolist() == [0.1]
    assert forward(net, np.zeros((3, 1))).shape == (3, 1)


def test_actor_outputs_distribution(rng):
    net = Mlp([6, 8, 8, 2], head="softmax", rng=rng)
    p = net.forward(rng.random((5, 6)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-14)
    assert np.all(p > 0)


def test_wrong_input_dim():
    with pytest.raises(ValueError):
        Mlp([3, 4, 1], rng=0).forward(np.zeros(2))


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    dims = [int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(1, 3))]
    net = Mlp(dims, rng=rng, init_range=0.8)
    x = rng.normal(size=(4, dims[0]))
    up = rng.normal(size=(4, dims[-1]))
    assert fd_check(net, x, up) < 1e-4


def test_zero_upstream_gives_zero_gradients(rng):
    net = Mlp([4, 5, 3, 2], rng=rng)
    for g in gradients(net, rng.random((3, 4)), np.zeros((3, 2))):
        assert not np.any(g)


def test_dead_unit_passes_no_gradient():
    net = Mlp([1, 2, 1], rng=0, init_range=0.0, bias_init=0.0)
    net.weights[0][:] = [[1.0, -1.0]]
    net.weights[1][:] = [[1.0], [1.0]]
    g = net.backward(np.array([[2.0]]), np.array([[1.0]]))
    # unit 1 has pre-activation -2
    assert g[0][0, 1] == 0.0 and g[1][1] == 0.0
    assert g[0][0, 0] == 2.0


def test_softmax_stable():
    z = np.array([1000.0, 1000.0, -1000.0])
    np.testing.assert_allclose(softmax(z), [0.5, 0.5, 0.0], atol=1e-300)
    np.testing.assert_allclose(np.exp(log_softmax(z))[:2], [0.5, 0.5])


def test_adam_zero_gradient_leaves_params():
    net = Mlp([3, 4, 1], rng=1)
    before = [p.copy() for p in net.params]
    opt = Adam(net.params, lr=0.1)
    apply_update(net, [np.zeros_like(p) for p in net.params], opt)
    for a, b in zip(before, net.params):
        np.testing.assert_array_equal(a, b)


def test_adam_first_step_moves_by_lr():
    p = np.array([1.0, -2.0])
    opt = Adam([p], lr=0.01)
    opt.step([p], [np.array([3.0, -0.5])])
    np.testing.assert_allclose(p, [0.99, -1.99], rtol=1e-6)


def test_sgd_mode():
    p = np.array([1.0])
    Adam([p], lr=0.5, sgd=True).step([p], [np.array([2.0])])
    assert p.tolist() == [0.0]


def test_non_finite_gradient_raises():
    p = np.array([1.0])
    with pytest.raises(DivergenceError):
        Adam([p]).step([p], [np.array([np.nan])])


def test_identical_nets_stay_identical(rng):
    a = Mlp([4, 6, 2], rng=3)
    b = Mlp([4, 6, 2], rng=3)
    oa, ob = Adam(a.params, lr=1e-2), Adam(b.params, lr=1e-2)
    for _ in range(5):
        x, up = rng.random((8, 4)), rng.random((8, 2))
        oa.step(a.params, a.backward(x, up))
        ob.step(b.params, b.backward(x, up))
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)


def test_checkpoint_round_trip(tmp_path, rng):
    net = Mlp([5, 7, 3, 2], head="softmax", rng=rng)
    opt = Adam(net.params, lr=1e-3)
    opt.step(net.params, net.backward(rng.random((2, 5)), rng.random((2, 2))))
    save_checkpoint(tmp_path / "ck.json", net, opt)
    back, bopt = load_checkpoint(tmp_path / "ck.json")
    x = rng.random((4, 5))
    np.testing.assert_array_equal(net.forward(x), back.forward(x))
    assert bopt.t == 1
    for a, b in zip(opt.m, bopt.m):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_version_checked(tmp_path):
    (tmp_path / "ck.json").write_text('{"version": 99}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "ck.json")
