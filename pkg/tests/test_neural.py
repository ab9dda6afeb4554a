import math

import numpy as np
import pytest

from tjunction_td3.neural import (
    Activation,
    AdamState,
    Gradients,
    Mlp,
    ShapeError,
    adam_step,
    backward,
    forward,
    init_mlp,
    parameter_count,
    polyak_update,
)

from .oracles import central_difference, reference_mlp


def test_parameter_count():
    assert parameter_count((45, 256, 256, 3)) == 45 * 256 + 256 + 256 * 256 + 256 + 256 * 3 + 3
    assert parameter_count((48, 256, 256, 1)) == 48 * 256 + 256 + 256 * 256 + 256 + 257


def test_zero_network_outputs_zero():
    net = Mlp((4, 5, 3), Activation.TANH, np.zeros(parameter_count((4, 5, 3))))
    assert forward(net, np.ones(4)).tolist() == [0.0, 0.0, 0.0]


def test_identity_network():
    net = Mlp.from_layers([np.eye(3), np.eye(3)], [np.zeros(3), np.zeros(3)])
    x = np.array([0.5, 2.0, 7.0])
    assert forward(net, x).tolist() == x.tolist()
    # the hidden ReLU clips negative coordinates
    assert forward(net, -x).tolist() == [0.0, 0.0, 0.0]


def test_forward_matches_reference_loop():
    rng = np.random.default_rng(3)
    for head in (Activation.IDENTITY, Activation.TANH):
        net = init_mlp((3, 4, 2), head, rng)
        for _ in range(10):
            x = rng.normal(size=3)
            ref = reference_mlp(net.weights, net.biases, x, head is Activation.TANH)
            np.testing.assert_allclose(forward(net, x), ref, atol=1e-12, rtol=0)


def test_batch_forward_equals_rowwise():
    rng = np.random.default_rng(0)
    net = init_mlp((6, 8, 8, 2), "tanh", rng)
    xs = rng.normal(size=(7, 6))
    batch = forward(net, xs)
    for row, x in zip(batch, xs):
        np.testing.assert_allclose(row, forward(net, x), atol=1e-14)


def test_init_bounds_and_final_scale():
    rng = np.random.default_rng(1)
    net = init_mlp((45, 256, 256, 3), "tanh", rng, final_scale=0.1)
    assert np.abs(net.weights[0]).max() <= 1 / math.sqrt(45)
    assert np.abs(net.weights[1]).max() <= 1 / 16
    assert np.abs(net.weights[2]).max() <= 0.1 / 16
    assert np.abs(net.weights[2]).max() > 0.09 / 16


def test_backward_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(2)
    net = init_mlp((5, 8, 3), "tanh", rng)
    g = backward(net, rng.normal(size=5), np.zeros(3))
    assert not g.params.any() and not g.input.any()


def test_backward_of_linear_layer():
    w = np.array([[1.0], [-2.0], [0.5]])
    net = Mlp.from_layers([w], [np.array([0.3])])
    x = np.array([2.0, 1.0, 4.0])
    g = backward(net, x, np.array([1.0]))
    assert g.weights[0].ravel().tolist() == x.tolist()
    assert g.biases[0].tolist() == [1.0]
    assert g.input.tolist() == w.ravel().tolist()


@pytest.mark.parametrize("seed, sizes, head", [
    (0, (3, 4, 2), "identity"),
    (1, (5, 8, 3), "tanh"),
    (2, (4, 6, 6, 1), "identity"),
    (3, (7, 5, 2), "tanh"),
    (4, (10, 16, 16, 3), "tanh"),
])
def test_backward_matches_central_differences(seed, sizes, head):
    rng = np.random.default_rng(seed)
    net = init_mlp(sizes, head, rng)
    x = rng.normal(size=sizes[0])
    up = rng.normal(size=sizes[-1])
    g = backward(net, x, up)

    def loss_p(p):
        return float(up @ forward(Mlp(net.layer_sizes, net.output_activation, p), x))

    def loss_x(xx):
        return float(up @ forward(net, xx))

    for analytic, numeric in ((g.params, central_difference(loss_p, net.params)),
                              (g.input, central_difference(loss_x, x))):
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        mask = scale > 1e-6
        rel = np.abs(analytic - numeric)[mask] / scale[mask]
        assert rel.max(initial=0.0) < 1e-4
        assert np.abs(analytic - numeric)[~mask].max(initial=0.0) < 1e-8


def test_batch_backward_sums_parameter_grads():
    rng = np.random.default_rng(5)
    net = init_mlp((4, 6, 2), "tanh", rng)
    xs, ups = rng.normal(size=(3, 4)), rng.normal(size=(3, 2))
    total = backward(net, xs, ups)
    summed = sum(backward(net, x, u).params for x, u in zip(xs, ups))
    np.testing.assert_allclose(total.params, summed, atol=1e-13)
    np.testing.assert_allclose(total.input[1], backward(net, xs[1], ups[1]).input, atol=1e-14)


def _grads_like(net: Mlp, values: np.ndarray) -> Gradients:
    return Gradients(net.layer_sizes, values, np.zeros(net.n_in))


def test_adam_zero_gradient_leaves_params():
    net = init_mlp((2, 3, 1), "identity", np.random.default_rng(0))
    before = net.params.copy()
    opt = AdamState.for_net(net)
    adam_step(net, _grads_like(net, np.zeros_like(before)), opt)
    assert np.array_equal(net.params, before) and opt.step == 1


def test_adam_first_step_moves_by_lr_times_sign():
    net = init_mlp((2, 3, 1), "identity", np.random.default_rng(0))
    before = net.params.copy()
    g = np.linspace(-2.0, 3.0, before.size)
    g[g == 0] = 0.5
    adam_step(net, _grads_like(net, g), AdamState.for_net(net, lr=0.01))
    np.testing.assert_allclose(net.params - before, -0.01 * np.sign(g), rtol=1e-6)


def test_adam_minimizes_quadratic():
    net = Mlp((1, 1), "identity", np.zeros(2))
    opt = AdamState.for_net(net, lr=0.1)
    for _ in range(100):
        adam_step(net, _grads_like(net, 2.0 * (net.params - 3.0)), opt)
    assert np.all(np.abs(net.params - 3.0) < 0.5)


def test_adam_rejects_mismatched_grads():
    net = Mlp((1, 1), "identity", np.zeros(2))
    bad = Gradients((2, 1), np.zeros(3), np.zeros(2))
    with pytest.raises(ShapeError):
        adam_step(net, bad, AdamState.for_net(net))


def test_polyak_examples():
    a = Mlp((1, 1), "identity", np.array([1.0, 1.0]))
    b = Mlp((1, 1), "identity", np.array([3.0, -1.0]))
    assert polyak_update(a.copy(), b, 0.0).params.tolist() == [1.0, 1.0]
    assert polyak_update(a.copy(), b, 1.0).params.tolist() == [3.0, -1.0]
    assert polyak_update(a.copy(), b, 0.5).params.tolist() == [2.0, 0.0]


def test_polyak_geometric_decay():
    tau, k = 0.005, 1000
    target = Mlp((1, 1), "identity", np.array([1.0, -2.0]))
    online = Mlp((1, 1), "identity", np.zeros(2))
    for _ in range(k):
        polyak_update(target, online, tau)
    np.testing.assert_allclose(target.params, np.array([1.0, -2.0]) * (1 - tau) ** k, rtol=0, atol=1e-10)


def test_polyak_rejects_mismatch_and_bad_tau():
    a = Mlp((1, 1), "identity", np.zeros(2))
    with pytest.raises(ShapeError):
        polyak_update(a, Mlp((2, 1), "identity", np.zeros(3)), 0.1)
    with pytest.raises(ValueError):
        polyak_update(a, a.copy(), 1.5)


def test_shape_errors():
    with pytest.raises(ShapeError):
        Mlp((3, 2), "identity", np.zeros(5))
    with pytest.raises(ShapeError, match="layer 1"):
        Mlp.from_layers([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)])
    net = Mlp((3, 2), "identity", np.zeros(8))
    with pytest.raises(ShapeError):
        forward(net, np.zeros(4))
    with pytest.raises(ShapeError):
        backward(net, np.zeros(3), np.zeros(3))
