import math

import numpy as np
import pytest

from frd.nn import Adam, Mlp, param_count, softmax
from helpers import finite_diff, max_rel_err


def matrix_forward(net, x):
    """Independent evaluation: explicit loops over layers with np.dot."""
    h = np.asarray(x, dtype=float)
    for i in range(len(net.weights)):
        z = np.dot(h, net.weights[i]) + net.biases[i]
        h = z if i == len(net.weights) - 1 else np.where(z > 0, z, 0.0)
    return h


def random_net(rng, width, layers, out):
    net = Mlp.build(4, width, layers, out, rng)
    for b in net.biases:
        b[:] = rng.normal(0, 0.1, size=b.shape)
    return net


def test_zero_net_gives_zero_output():
    net = Mlp([4, 8, 2])
    for p in net.params:
        p[...] = 0
    assert np.array_equal(net.forward(np.ones(4)), np.zeros(2))


def test_identity_single_layer():
    net = Mlp([4, 4])
    net.weights[0][...] = np.eye(4)
    x = np.array([1.0, -2.0, 3.0, -4.0])
    assert np.array_equal(net.forward(x), x)


def test_forward_matches_matrix_evaluation():
    rng = np.random.default_rng(0)
    for _ in range(10):
        net = random_net(rng, 24, 2, 2)
        x = rng.normal(size=(5, 4))
        assert np.allclose(net.forward(x), matrix_forward(net, x), atol=1e-12, rtol=0)
        assert np.allclose(net.forward(x[0]), matrix_forward(net, x[0]), atol=1e-12, rtol=0)


def test_forward_rejects_bad_width():
    with pytest.raises(ValueError):
        Mlp([4, 3, 2]).forward(np.zeros(3))


def test_softmax_examples():
    assert np.allclose(softmax([0.0, 0.0]), [0.5, 0.5])
    e = math.e
    assert np.allclose(softmax([1.0, 0.0]), [e / (e + 1), 1 / (e + 1)], atol=1e-15)
    assert np.allclose(softmax([3.0, -1.0]), softmax([1003.0, 999.0]), atol=1e-15)
    p = softmax([800.0, -800.0])
    assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12


def test_softmax_valid_distribution():
    rng = np.random.default_rng(1)
    z = rng.normal(scale=5, size=(1000, 2))
    p = softmax(z)
    assert np.all(p > 0) and np.all(p < 1)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)


def test_zero_upstream_gives_zero_grads():
    net = random_net(np.random.default_rng(2), 8, 2, 2)
    _, cache = net.forward_cache(np.ones((3, 4)))
    assert all(not g.any() for g in net.backward(cache, np.zeros((3, 2))))


def test_backward_rejects_bad_shape():
    net = Mlp([4, 8, 2])
    _, cache = net.forward_cache(np.ones((3, 4)))
    with pytest.raises(ValueError):
        net.backward(cache, np.zeros((3, 1)))


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng, int(rng.choice([3, 6])), int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    x = rng.normal(size=(4, 4))
    w = rng.normal(size=(4, net.widths[-1]))
    f = lambda: float(np.sum(w * net.forward(x)))
    _, cache = net.forward_cache(x)
    analytic = net.backward(cache, w)
    assert max_rel_err(analytic, finite_diff(f, net.params)) <= 1e-4


def test_linear_net_least_squares_gradient():
    rng = np.random.default_rng(3)
    net = Mlp([4, 1], rng)
    net.biases[0][:] = 0.3
    X, y = rng.normal(size=(20, 4)), rng.normal(size=20)
    pred, cache = net.forward_cache(X)
    resid = pred[:, 0] - y
    gW, gb = net.backward(cache, (2 * resid / len(y))[:, None])
    # closed form gradient of mean squared error for a linear model
    w, b = net.weights[0][:, 0], net.biases[0][0]
    r = X @ w + b - y
    assert np.allclose(gW[:, 0], 2 * X.T @ r / len(y), atol=1e-13)
    assert np.allclose(gb, 2 * r.mean(), atol=1e-13)


def test_flat_round_trip():
    rng = np.random.default_rng(4)
    net = Mlp.build(4, 24, 2, 2, rng)
    flat = net.get_flat()
    assert flat.shape == (param_count([4, 24, 24, 2]),) == (net.n_params,)
    other = Mlp.build(4, 24, 2, 2, np.random.default_rng(5))
    other.set_flat(flat)
    assert np.array_equal(other.get_flat(), flat)
    with pytest.raises(ValueError):
        other.set_flat(flat[:-1])


def test_param_count():
    assert param_count([4, 24, 24, 2]) == 4 * 24 + 24 + 24 * 24 + 24 + 24 * 2 + 2
    assert param_count([4, 100, 1]) == 601


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.5, -2.0])]
    opt = Adam(p, lr=0.1)
    opt.step(p, [np.zeros(2)])
    assert np.array_equal(p[0], [1.5, -2.0]) and opt.t == 1


def test_adam_first_step_hand_evaluation():
    p = [np.array([1.0])]
    opt = Adam(p, lr=0.01)
    g = 4.0
    opt.step(p, [np.array([g])])
    m_hat = (0.1 * g) / (1 - 0.9)
    v_hat = (0.001 * g * g) / (1 - 0.999)
    assert p[0][0] == pytest.approx(1.0 - 0.01 * m_hat / (math.sqrt(v_hat) + 1e-8), abs=1e-15)
    assert p[0][0] == pytest.approx(0.99, abs=1e-9)


def test_adam_deterministic():
    rng = np.random.default_rng(6)
    g = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    a = [np.ones((3, 2)), np.zeros(2)]
    b = [x.copy() for x in a]
    oa, ob = Adam(a), Adam(b)
    for _ in range(5):
        oa.step(a, g)
        ob.step(b, g)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_adam_rejects_nonfinite():
    p = [np.zeros(2)]
    with pytest.raises(FloatingPointError):
        Adam(p).step(p, [np.array([np.nan, 0.0])])
