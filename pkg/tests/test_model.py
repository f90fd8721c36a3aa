import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference
from spectrallab.linalg import ShapeMismatchError, frobenius_norm, l2_norm, rms_norm, spectral_norm, stable_rank
from spectrallab.model import (
    Activation,
    EmptyBatchError,
    MlpConfig,
    MlpState,
    backward,
    batch_forward_backward,
    forward,
    loss_and_grad,
)
from spectrallab.parametrization import init_mlp


def random_state(widths, activation, seed, bias=False):
    r = np.random.default_rng(seed)
    cfg = MlpConfig(widths, activation, bias)
    ws = [r.standard_normal(s) / np.sqrt(s[1]) for s in cfg.shapes()]
    bs = [0.3 * r.standard_normal(d) for d in widths[1:]] if bias else None
    return MlpState(cfg, ws, bs)


def flat_params(state):
    parts = list(state.weights) + (list(state.biases) if state.biases is not None else [])
    return np.concatenate([p.ravel() for p in parts])


def unflat(state, v):
    ws, off = [], 0
    for w in state.weights:
        ws.append(np.asarray(v[off:off + w.size]).reshape(w.shape))
        off += w.size
    bs = None
    if state.biases is not None:
        bs = []
        for b in state.biases:
            bs.append(np.asarray(v[off:off + b.size]))
            off += b.size
    return state.with_weights(ws, bs)


def analytic_and_fd(state, x, y, step=1e-5):
    _, grads, _ = batch_forward_backward(state, x, y)
    parts = list(grads.weight_grads) + (list(grads.bias_grads) if grads.bias_grads is not None else [])
    an = np.concatenate([p.ravel() for p in parts])
    f = lambda v: batch_forward_backward(unflat(state, np.array(v)), x, y)[0]
    fd = np.array(central_difference(f, list(flat_params(state)), step))
    return an, fd


def test_identity_linear_net_is_identity(rng):
    cfg = MlpConfig((5, 5, 5), Activation.LINEAR)
    x = rng.standard_normal(5)
    assert np.array_equal(forward(MlpState(cfg, [np.eye(5)] * 2), x).output, x)


def test_rank_one_single_layer(rng):
    u, v, x = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(4)
    st_ = MlpState(MlpConfig((4, 3), Activation.RELU), [np.outer(u, v)])
    assert np.allclose(forward(st_, x).output, u * (v @ x), rtol=1e-14)


def test_mup_hidden_features_have_unit_rms(rng):
    widths = (3072, 512, 512, 1)
    state = init_mlp(MlpConfig(widths), "mup", seed=0)
    rec = forward(state, rng.standard_normal((100, 3072)))
    for l in (1, 2):
        r = np.sqrt(np.mean(rec.preacts[l] ** 2, axis=1))
        assert r.min() >= 0.2 and r.max() <= 5


def test_forward_shapes_and_determinism(rng):
    state = random_state((6, 4, 2), Activation.TANH, 0)
    x = rng.standard_normal((3, 6))
    a, b = forward(state, x), forward(state, x)
    assert all(np.array_equal(p, q) for p, q in zip(a.preacts, b.preacts))
    assert a.output.shape == (3, 2) and len(a) == 3
    assert np.array_equal(a[1].output, forward(state, x[1]).output)
    with pytest.raises(ShapeMismatchError):
        forward(state, rng.standard_normal(5))


def test_loss_examples(rng):
    y = rng.standard_normal(4)
    loss, g = loss_and_grad(y, y)
    assert loss == 0.0 and not g.any()
    loss, g = loss_and_grad([1.0], [-1.0])
    assert loss == 2.0 and np.array_equal(g, [2.0])
    with pytest.raises(ShapeMismatchError):
        loss_and_grad([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        loss_and_grad([1.0], [1.0], kind="cross_entropy")


def test_loss_gradient_matches_finite_differences(rng):
    out, tgt = rng.standard_normal(6), rng.standard_normal(6)
    _, g = loss_and_grad(out, tgt)
    fd = central_difference(lambda v: loss_and_grad(np.array(v), tgt)[0], list(out))
    assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) <= 1e-7


def test_linear_two_layer_entrywise_gradients(rng):
    state = random_state((5, 7, 3), Activation.LINEAR, 11)
    x, y = rng.standard_normal((4, 5)), rng.standard_normal((4, 3))
    an, fd = analytic_and_fd(state, x, y)
    assert np.all(np.abs(an - fd) <= 1e-6 * np.maximum(np.abs(an), 1e-3 * np.abs(an).max()))


@settings(max_examples=40, deadline=None)
@given(act=st.sampled_from(list(Activation)), depth=st.integers(1, 4), seed=st.integers(0, 10_000),
       bias=st.booleans(), batch=st.integers(1, 4))
def test_gradients_match_finite_differences(act, depth, seed, bias, batch):
    r = np.random.default_rng(seed)
    widths = tuple(int(w) for w in r.integers(1, 17, size=depth + 1))
    state = random_state(widths, act, seed, bias)
    x, y = r.standard_normal((batch, widths[0])), r.standard_normal((batch, widths[-1]))
    an, fd = analytic_and_fd(state, x, y)
    assert np.linalg.norm(an - fd) <= 1e-5 * max(np.linalg.norm(an), 1e-8)


def test_zero_out_grad_gives_zero_record(rng):
    state = random_state((4, 6, 2), Activation.RELU, 2, bias=True)
    rec = forward(state, rng.standard_normal((3, 4)))
    g = backward(state, rec, np.zeros((3, 2)))
    assert not any(w.any() for w in g.weight_grads) and not any(b.any() for b in g.bias_grads)
    with pytest.raises(ShapeMismatchError):
        backward(state, rec, np.zeros((3, 3)))


def test_batch_one_gradient_is_rank_one(rng):
    state = random_state((10, 12, 12, 1), Activation.RELU, 4)
    _, grads, _ = batch_forward_backward(state, rng.standard_normal(10), [1.0])
    for w in grads.weight_grads:
        if w.any():
            assert stable_rank(w) == pytest.approx(1.0, abs=1e-10)
            assert spectral_norm(w) == pytest.approx(frobenius_norm(w), rel=1e-10)


def test_batch_reductions(rng):
    state = random_state((5, 8, 2), Activation.TANH, 6)
    x, y = rng.standard_normal((8, 5)), rng.standard_normal((8, 2))
    l1, g1, _ = batch_forward_backward(state, x[0], y[0])
    rec = forward(state, x[0])
    _, out_g = loss_and_grad(rec.output, y[0])
    direct = backward(state, rec, out_g)
    assert all(np.array_equal(a, b) for a, b in zip(g1.weight_grads, direct.weight_grads))
    _, g2, _ = batch_forward_backward(state, np.stack([x[0], x[0]]), np.stack([y[0], y[0]]))
    assert all(np.allclose(a, b, rtol=0, atol=1e-15) for a, b in zip(g1.weight_grads, g2.weight_grads))
    _, g8, _ = batch_forward_backward(state, x, y)
    singles = [batch_forward_backward(state, x[i], y[i])[1].weight_grads for i in range(8)]
    for l in range(2):
        avg = sum(s[l] for s in singles) / 8
        assert np.max(np.abs(g8.weight_grads[l] - avg)) <= 1e-12
    with pytest.raises(EmptyBatchError):
        batch_forward_backward(state, np.zeros((0, 5)), np.zeros((0, 2)))


def test_relu_postactivation_ratio(rng):
    d = 512
    state = init_mlp(MlpConfig((d, d, d, 1)), "mup", seed=3)
    rec = forward(state, rng.standard_normal((64, d)))
    for l in (1, 2):
        h, hp = rec.preacts[l], rec.postacts[l]
        ratio = np.linalg.norm(hp, axis=1) / np.linalg.norm(h, axis=1)
        assert np.all(ratio <= 1.0)
        assert np.mean(ratio) == pytest.approx(1 / np.sqrt(2), abs=0.05)


def test_relu_derivative_at_zero():
    assert Activation.RELU.derivative(np.array([0.0]))[0] == 0.0
    assert Activation.TANH.derivative(np.array([0.0]))[0] == 1.0


def test_state_snapshot_is_read_only(rng):
    state = random_state((3, 4, 1), Activation.RELU, 0)
    state.weights[0] += 1.0
    assert not np.array_equal(state.weights[0], state.init_weights[0])
    with pytest.raises(ValueError):
        state.init_weights[0][0, 0] = 5.0
    assert np.array_equal(state.initial().weights[0], state.init_weights[0])
    with pytest.raises(ShapeMismatchError):
        MlpState(MlpConfig((3, 4, 1)), [np.zeros((4, 3))])


def test_vector_helpers_agree(rng):
    x = rng.standard_normal(16)
    assert rms_norm(x) == pytest.approx(l2_norm(x) / 4)
