import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qjoin.nn import (
    AdamState,
    DenseNet,
    Layer,
    adam_step,
    masked_entropy,
    masked_softmax,
    mlp_param_count,
)


def finite_difference_params(net, x, upstream, h=1e-6):
    flat = net.params_flat()
    grads = np.zeros_like(flat)
    for j in range(len(flat)):
        bumped = flat.copy()
        bumped[j] += h
        net.set_params_flat(bumped)
        plus = float(np.sum(net.forward(x) * upstream))
        bumped[j] -= 2 * h
        net.set_params_flat(bumped)
        minus = float(np.sum(net.forward(x) * upstream))
        grads[j] = (plus - minus) / (2 * h)
    net.set_params_flat(flat)
    return grads


def test_zero_net_maps_to_zero():
    layers = [Layer(np.zeros((3, 2)), np.zeros(2), "tanh")]
    net = DenseNet(layers)
    assert np.allclose(net.forward(np.ones(3)), 0.0)


def test_identity_layer_echoes_input():
    net = DenseNet([Layer(np.eye(4), np.zeros(4), "identity")])
    x = np.array([0.3, -1.2, 0.0, 2.5])
    assert np.allclose(net.forward(x), x)


def test_forward_rejects_bad_width(rng):
    net = DenseNet.create(rng, [5, 3], ["tanh"])
    with pytest.raises(ValueError):
        net.forward(np.ones(4))


def test_backward_matches_finite_differences(rng):
    for _ in range(5):
        net = DenseNet.create(rng, [4, 6, 3], ["tanh", "identity"])
        x = rng.normal(size=(2, 4))
        upstream = rng.normal(size=(2, 3))
        out, trace = net.forward_trace(x)
        analytic, input_grad = net.backward(trace, upstream)
        numeric = finite_difference_params(net, x, upstream)
        assert np.allclose(analytic, numeric, atol=1e-5)
        # input gradient against finite differences too
        for j in range(4):
            bumped = x.copy()
            bumped[0, j] += 1e-6
            plus = float(np.sum(net.forward(bumped) * upstream))
            bumped[0, j] -= 2e-6
            minus = float(np.sum(net.forward(bumped) * upstream))
            assert input_grad[0, j] == pytest.approx((plus - minus) / 2e-6, abs=1e-5)


def test_params_flat_roundtrip(rng):
    net = DenseNet.create(rng, [3, 5, 2], ["tanh", "identity"])
    flat = net.params_flat()
    assert flat.shape == (net.param_count(),)
    net.set_params_flat(flat * 2)
    assert np.allclose(net.params_flat(), flat * 2)


def test_init_is_seeded():
    a = DenseNet.create(np.random.default_rng(3), [4, 4], ["tanh"])
    b = DenseNet.create(np.random.default_rng(3), [4, 4], ["tanh"])
    assert np.array_equal(a.params_flat(), b.params_flat())


def test_mlp_param_count_formula(rng):
    net = DenseNet.create(rng, [40, 128, 128, 12], ["tanh", "tanh", "identity"])
    assert net.param_count() == mlp_param_count(40, 128, 12)


def test_adam_zero_gradient_keeps_params():
    adam = AdamState(dim=3, lr=0.1)
    params = np.array([1.0, -2.0, 0.5])
    updated = adam_step(adam, params, np.zeros(3))
    assert np.allclose(updated, params)
    assert adam.step_count == 1


def test_adam_first_step_moves_by_lr_sign():
    adam = AdamState(dim=2, lr=0.01)
    params = np.zeros(2)
    grads = np.array([3.0, -0.25])
    updated = adam_step(adam, params, grads)
    # bias correction makes the first step ~= -lr * sign(g)
    assert updated == pytest.approx(-0.01 * np.sign(grads), rel=1e-6)


def test_adam_deterministic():
    def run():
        adam = AdamState(dim=2, lr=0.05)
        params = np.array([0.2, -0.4])
        rng = np.random.default_rng(17)
        for _ in range(10):
            params = adam_step(adam, params, rng.normal(size=2))
        return params

    assert np.array_equal(run(), run())


def test_adam_rejects_nonfinite():
    adam = AdamState(dim=1)
    with pytest.raises(ValueError, match="non-finite"):
        adam_step(adam, np.zeros(1), np.array([np.nan]))


def test_masked_softmax_uniform_all_valid():
    probs = masked_softmax(np.zeros(12), np.ones(12, dtype=bool))
    assert np.allclose(probs, 1.0 / 12.0)


def test_masked_softmax_two_valid():
    mask = np.zeros(6, dtype=bool)
    mask[[1, 4]] = True
    probs = masked_softmax(np.zeros(6), mask)
    assert probs[1] == probs[4] == pytest.approx(0.5)
    assert probs.sum() == pytest.approx(1.0)
    assert np.all(probs[~mask] == 0.0)


def test_masked_softmax_extreme_logits_stay_finite():
    mask = np.array([True, False, True])
    probs = masked_softmax(np.array([0.0, 1000.0, -500.0]), mask)
    assert np.isfinite(probs).all()
    assert probs[1] == 0.0
    assert probs.sum() == pytest.approx(1.0)


def test_masked_softmax_rejects_all_masked():
    with pytest.raises(ValueError):
        masked_softmax(np.zeros(3), np.zeros(3, dtype=bool))


def test_masked_entry_never_sampled(rng):
    mask = np.array([True, True, False, True])
    probs = masked_softmax(rng.normal(size=4), mask)
    draws = rng.choice(4, size=100_000, p=probs)
    assert not np.any(draws == 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=30), st.integers(min_value=0, max_value=2**31 - 1))
def test_masked_softmax_is_distribution_on_support(n_valid, seed):
    rng = np.random.default_rng(seed)
    size = 32
    mask = np.zeros(size, dtype=bool)
    mask[rng.choice(size, size=min(n_valid, size), replace=False)] = True
    probs = masked_softmax(rng.normal(scale=5.0, size=size), mask)
    assert probs.sum() == pytest.approx(1.0)
    assert np.all(probs[~mask] == 0.0)
    assert np.all(probs >= 0.0)
    ent = masked_entropy(probs)
    assert ent <= np.log(mask.sum()) + 1e-9


def test_entropy_uniform_is_log_n():
    probs = masked_softmax(np.zeros(12), np.ones(12, dtype=bool))
    assert masked_entropy(probs) == pytest.approx(np.log(12))
