import math

import numpy as np
import pytest

from helpers import fd_max_error, random_net
from tf2dnn.network import (
    AdamState,
    LayerSpec,
    NetworkParams,
    adam_update,
    autoencoder_specs,
    backward,
    forward,
    mse_cost,
    sample_masks,
    strip_factors,
)
from tf2dnn.numeric import Rng, softplus


def test_default_architecture_mirrors_reference_shape():
    specs = autoencoder_specs()
    widths = [s.out_dim for s in specs]
    assert widths == [500, 500, 15, 500, 500, 60]
    assert specs[0].in_dim == 60
    assert [s.is_tf2 for s in specs] == [False, False, False, True, False, False]
    assert specs[-1].nonlinearity == "linear"


def test_output_layer_must_be_linear():
    with pytest.raises(ValueError):
        NetworkParams((LayerSpec(2, 2, "softplus"),), 0, 0, {})


def test_zero_factors_match_plain_network():
    params = random_net(1, r1=3, r2=4)
    plain = strip_factors(params)
    x = np.random.default_rng(0).normal(size=(50, 6))
    a = forward(params, x, np.zeros((50, 3)), np.zeros((50, 4))).output
    b = forward(plain, x).output
    np.testing.assert_array_equal(a, b)


def test_injection_path_in_isolation():
    v = np.array([-2.0, 0.0, 0.5])
    specs = (LayerSpec(2, 3, "softplus", is_tf2=True), LayerSpec(3, 2, "linear"))
    arrays = {"W0": np.zeros((3, 2)), "b0": np.zeros(3), "V1_0": np.eye(3),
              "W1": np.ones((2, 3)), "b1": np.zeros(2)}
    params = NetworkParams(specs, 3, 0, arrays)
    params.validate()
    acts = forward(params, [0.7, -1.1], z1=v)
    np.testing.assert_array_equal(acts.outputs[0][0], softplus(v))


def test_two_layer_chain_by_hand():
    specs = (LayerSpec(2, 2, "softplus"), LayerSpec(2, 2, "linear"))
    arrays = {"W0": np.full((2, 2), 0.1), "b0": np.zeros(2), "W1": np.full((2, 2), 0.1), "b1": np.zeros(2)}
    params = NetworkParams(specs, 0, 0, arrays)
    # scalar-by-scalar: each hidden unit sees 0.1*1 + 0.1*1
    hidden = math.log(1.0 + math.exp(0.1 * 1.0 + 0.1 * 1.0))
    expected = 0.1 * hidden + 0.1 * hidden
    out = forward(params, [1.0, 1.0]).output[0]
    np.testing.assert_allclose(out, [expected, expected], rtol=0, atol=1e-15)
    assert expected == pytest.approx(0.15962777387631837, abs=1e-15)


def test_injection_is_affine():
    params = random_net(2)
    x = np.random.default_rng(1).normal(size=(5, 6))
    z1 = np.random.default_rng(2).normal(size=(5, 2))
    delta = np.random.default_rng(3).normal(size=(5, 2))
    l = 2
    a0 = forward(params, x, z1, None).pre[l]
    a1 = forward(params, x, z1 + delta, None).pre[l]
    np.testing.assert_allclose(a1 - a0, delta @ params.V1(l).T, rtol=0, atol=1e-12)


def test_zero_dropout_is_a_no_op():
    params = random_net(3, dropout_p=0.0)
    x = np.random.default_rng(0).normal(size=(8, 6))
    assert sample_masks(params, 8, Rng(0)) == {}
    ones = {l: np.ones((8, s.out_dim)) for l, s in enumerate(params.specs) if s.dropout_site}
    a = forward(params, x, masks=ones).output
    b = forward(params, x).output
    np.testing.assert_array_equal(a, b)


def test_dropout_masks_are_inverted():
    params = random_net(4, dropout_p=0.25)
    masks = sample_masks(params, 2000, Rng(1))
    assert masks
    for m in masks.values():
        assert set(np.unique(m)) <= {0.0, 1.0 / 0.75}
        assert abs(m.mean() - 1.0) < 0.05


def test_backward_zero_output_gradient():
    params = random_net(5)
    acts = forward(params, np.ones((3, 6)), np.ones((3, 2)), np.ones((3, 3)))
    g = backward(params, acts, np.zeros((3, 6)))
    assert all(not np.any(v) for v in g.params.values())
    assert not np.any(g.dz1) and not np.any(g.dz2)


def test_backward_dead_injection_path():
    params = random_net(6)
    params.arrays["V1_2"][:] = 0.0
    acts = forward(params, np.ones((2, 6)), np.ones((2, 2)), np.ones((2, 3)))
    g = backward(params, acts, np.ones((2, 6)))
    np.testing.assert_array_equal(g.dz1, np.zeros((2, 2)))


@pytest.mark.parametrize("seed", range(4))
def test_backward_matches_finite_differences(seed):
    params = random_net(seed)
    rng = np.random.default_rng(100 + seed)
    x = rng.normal(size=(3, 6))
    z1 = rng.normal(size=(3, 2))
    z2 = rng.normal(size=(3, 3))
    assert fd_max_error(params, x, z1, z2) <= 1e-5


def test_backward_with_dropout_masks_matches_finite_differences():
    params = random_net(9, dropout_p=0.3)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 6))
    z1 = rng.normal(size=(2, 2))
    z2 = rng.normal(size=(2, 3))
    masks = sample_masks(params, 2, Rng(2))
    assert fd_max_error(params, x, z1, z2, masks) <= 1e-5


def test_backward_rejects_stale_activations():
    params = random_net(1)
    acts = forward(params, np.ones((2, 6)))
    with pytest.raises(ValueError):
        backward(params, acts, np.ones((3, 6)))


def test_mse_cost_examples():
    cost, grad = mse_cost([1.0, 2.0], [1.0, 2.0])
    assert cost == 0.0 and not np.any(grad)
    cost, grad = mse_cost([1.0, 0.0], [0.0, 0.0])
    assert cost == 0.5
    np.testing.assert_array_equal(grad, [1.0, 0.0])
    with pytest.raises(ValueError):
        mse_cost([1.0], [1.0, 2.0])


def test_mse_gradient_finite_differences():
    rng = np.random.default_rng(4)
    out, tgt = rng.normal(size=5), rng.normal(size=5)
    _, grad = mse_cost(out, tgt)
    h = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        num = (mse_cost(out + e, tgt)[0] - mse_cost(out - e, tgt)[0]) / (2 * h)
        assert abs(num - grad[i]) <= 1e-7


def _scalar_params(value):
    return NetworkParams((LayerSpec(1, 1, "linear"),), 0, 0, {"W0": np.array([[value]]), "b0": np.zeros(1)})


def test_adam_zero_gradient_leaves_params():
    params = _scalar_params(1.5)
    adam_update(AdamState(lr=0.1), params, {"W0": np.zeros((1, 1))})
    assert params.W(0)[0, 0] == 1.5


@pytest.mark.parametrize("g", [3.7, -0.02, 250.0])
def test_adam_first_step_has_size_lr(g):
    params = _scalar_params(0.0)
    state = AdamState()
    adam_update(state, params, {"W0": np.array([[g]])}, lr=0.01)
    assert abs(params.W(0)[0, 0]) == pytest.approx(0.01, rel=1e-6)
    assert state.t == 1


def test_adam_minimizes_quadratic():
    params = _scalar_params(0.0)
    state = AdamState(lr=0.1)
    for _ in range(200):
        w = params.W(0)[0, 0]
        adam_update(state, params, {"W0": np.array([[2.0 * (w - 3.0)]])})
    assert abs(params.W(0)[0, 0] - 3.0) < 0.05
    assert state.t == 200
