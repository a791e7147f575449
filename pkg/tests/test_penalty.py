import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepcae import tensor as T
from deepcae.gradcheck import penalty_vs_fd, random_encoder, relative_error
from deepcae.penalty import (ForwardTrace, contraction_ratio, deepcae_penalty, deepcae_penalty_tape,
                             encoder_jacobian, layer_jacobian, single_layer_penalty_sigmoid,
                             single_layer_penalty_tanh, stacked_penalty)
from deepcae.tensor import ShapeError, Tape


def _widths(rng, k, d_max=8):
    w = [int(rng.integers(1, d_max + 1))]
    for _ in range(k):
        w.append(int(rng.integers(1, w[-1] + 1)))
    return w


def _explicit_frob(D, W):
    J = np.diag(D) @ W
    return float(np.sum(J * J))


def test_single_layer_tanh_examples():
    W = np.random.default_rng(0).normal(size=(3, 5))
    assert single_layer_penalty_tanh(np.zeros((1, 3)), W).value == pytest.approx(np.sum(W ** 2), rel=1e-14)
    sat = np.full((1, 3), np.tanh(20.0))
    assert single_layer_penalty_tanh(sat, W).value < 1e-30

    rng = np.random.default_rng(1)
    h = rng.uniform(-0.95, 0.95, size=(4, 3))
    got = single_layer_penalty_tanh(h, W).per_sample
    want = [_explicit_frob(1 - row ** 2, W) for row in h]
    assert np.max(np.abs(got - want) / np.abs(want)) < 1e-12


def test_single_layer_tanh_rejects_bad_input():
    with pytest.raises(ValueError):
        single_layer_penalty_tanh(np.array([[1.5, 0.0]]), np.ones((2, 2)))
    with pytest.raises(ShapeError):
        single_layer_penalty_tanh(np.zeros((1, 3)), np.ones((2, 2)))


def test_single_layer_sigmoid_examples():
    assert single_layer_penalty_sigmoid(np.array([[0.5]]), np.array([[1.0, 1.0]])).value == pytest.approx(0.125, abs=1e-15)
    assert single_layer_penalty_sigmoid(np.array([[1e-9, 1 - 1e-9]]), np.ones((2, 3))).value < 1e-15
    rng = np.random.default_rng(2)
    h, W = rng.uniform(0.05, 0.95, size=(3, 4)), rng.normal(size=(4, 6))
    want = [_explicit_frob(row * (1 - row), W) for row in h]
    assert np.max(np.abs(single_layer_penalty_sigmoid(h, W).per_sample - want) / np.abs(want)) < 1e-12
    with pytest.raises(ValueError):
        single_layer_penalty_sigmoid(np.array([[1.2]]), np.ones((1, 1)))


def test_layer_jacobian_examples():
    W = np.random.default_rng(3).normal(size=(3, 4))
    assert np.array_equal(layer_jacobian(np.zeros((1, 3)), W), W)
    x = np.array([[0.2, -0.5, 0.9]])
    assert np.allclose(layer_jacobian(x, np.eye(3)), np.diag(1 - x[0] ** 2), atol=0)


def test_layer_jacobian_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(10):
        d_in, d_out = rng.integers(1, 9, size=2)
        W, b, x0 = rng.normal(size=(d_out, d_in)), rng.normal(size=d_out), rng.uniform(-1, 1, d_in)
        out = np.tanh(W @ x0 + b).reshape(1, -1)
        fd = T.finite_diff_jacobian(lambda v: np.tanh(W @ v + b), x0, 1e-5)
        assert relative_error(layer_jacobian(out, W), fd) < 1e-6


def test_encoder_jacobian_examples():
    rng = np.random.default_rng(5)
    enc = random_encoder(rng, [5, 3])
    tr = enc.trace(rng.uniform(-1, 1, (1, 5)))
    assert np.array_equal(encoder_jacobian(tr, enc.weights), layer_jacobian(tr.layer_outputs[1], enc.weights[0]))

    zeros = ForwardTrace([np.zeros((1, 4))] * 4)
    assert np.array_equal(encoder_jacobian(zeros, [np.eye(4)] * 3), np.eye(4))


@pytest.mark.parametrize("step", [1e-4, 1e-5])
def test_encoder_jacobian_matches_finite_differences(step):
    rng = np.random.default_rng(6)
    enc = random_encoder(rng, [6, 5, 4, 3])
    x = rng.uniform(-1, 1, 6)
    fd = T.finite_diff_jacobian(enc, x, step)
    assert relative_error(encoder_jacobian(enc.trace(x.reshape(1, -1)), enc.weights), fd) < 1e-6


def test_encoder_jacobian_rejects_broken_chain():
    tr = ForwardTrace([np.zeros((1, 4)), np.zeros((1, 3))])
    with pytest.raises(ShapeError):
        encoder_jacobian(tr, [np.ones((3, 5))])


def test_deepcae_penalty_examples():
    rng = np.random.default_rng(7)
    enc = random_encoder(rng, [6, 3])
    tr = enc.trace(rng.uniform(-1, 1, (5, 6)))
    single = single_layer_penalty_tanh(tr.h, enc.weights[0]).per_sample
    assert np.max(np.abs(deepcae_penalty(tr, enc.weights).per_sample - single)) <= 1e-12 * np.max(single)

    zero = [np.zeros((4, 6)), np.zeros((2, 4))]
    tr0 = ForwardTrace([rng.uniform(-1, 1, (3, 6)), np.zeros((3, 4)), np.zeros((3, 2))])
    assert deepcae_penalty(tr0, zero).value == 0.0

    enc = random_encoder(rng, [6, 5, 3])
    assert penalty_vs_fd(enc, rng.uniform(-1, 1, (4, 6))) < 1e-5


def test_penalty_value_is_batch_mean():
    rng = np.random.default_rng(8)
    enc = random_encoder(rng, [5, 4, 2])
    p = deepcae_penalty(enc.trace(rng.uniform(-1, 1, (7, 5))), enc.weights)
    assert p.value == pytest.approx(np.mean(p.per_sample), rel=1e-15)
    assert p.value >= 0


def test_stacked_penalty_examples():
    rng = np.random.default_rng(9)
    enc = random_encoder(rng, [6, 4, 2])
    tr = enc.trace(rng.uniform(-1, 1, (3, 6)))
    p1 = single_layer_penalty_tanh(tr.layer_outputs[1], enc.weights[0]).per_sample
    p2 = single_layer_penalty_tanh(tr.layer_outputs[2], enc.weights[1]).per_sample
    assert np.allclose(stacked_penalty(tr, enc.weights).per_sample, p1 + p2, rtol=1e-14, atol=0)
    gap = abs(stacked_penalty(tr, enc.weights).value - deepcae_penalty(tr, enc.weights).value)
    assert gap > 1e-8


def test_penalty_gradient_wrt_weights_matches_finite_differences():
    rng = np.random.default_rng(10)
    for _ in range(10):
        widths = _widths(rng, int(rng.integers(1, 4)))
        enc = random_encoder(rng, widths)
        X = rng.uniform(-1, 1, (3, widths[0]))

        def pen(Ws):
            trace_enc = type(enc)(Ws, enc.biases)
            return deepcae_penalty(trace_enc.trace(X), Ws).value

        t = Tape()
        Wrefs = [t.param(W) for W in enc.weights]
        brefs = [t.constant(b.reshape(1, -1)) for b in enc.biases]
        xs = [t.constant(X)]
        for W, b in zip(Wrefs, brefs):
            xs.append(T.tanh(T.add(T.matmul(xs[-1], T.transpose(W)), T.tile_rows(b, X.shape[0]))))
        grads = t.backward(deepcae_penalty_tape(xs, Wrefs))
        for i, W in enumerate(enc.weights):
            num = np.zeros_like(W)
            for idx in np.ndindex(W.shape):
                up = [w.copy() for w in enc.weights]
                dn = [w.copy() for w in enc.weights]
                up[i][idx] += 1e-5
                dn[i][idx] -= 1e-5
                num[idx] = (pen(up) - pen(dn)) / 2e-5
            assert relative_error(grads[Wrefs[i]], num) < 1e-4


def test_contraction_ratio_examples():
    rng = np.random.default_rng(11)
    x, xp = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    assert contraction_ratio(lambda v: v, x, xp) == pytest.approx(1.0, rel=1e-14)
    assert contraction_ratio(lambda v: np.zeros((1, 2)), x, xp) == 0.0
    with pytest.raises(ValueError):
        contraction_ratio(lambda v: v, x, x)

    enc = random_encoder(rng, [5, 4, 3])
    x = rng.uniform(-0.5, 0.5, 5)
    u = rng.normal(size=5)
    u /= np.linalg.norm(u)
    J = encoder_jacobian(enc.trace(x.reshape(1, -1)), enc.weights)
    ratio = contraction_ratio(enc, x, x + 1e-6 * u)
    assert abs(ratio - np.linalg.norm(J @ u)) / np.linalg.norm(J @ u) < 1e-3


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_penalty_matches_numeric_jacobian(k, seed):
    rng = np.random.default_rng(seed)
    enc = random_encoder(rng, _widths(rng, k))
    assert penalty_vs_fd(enc, rng.uniform(-1, 1, (2, len(enc.weights[0][0])))) < 1e-5


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_jacobian_norm_is_submultiplicative(k, seed):
    rng = np.random.default_rng(seed)
    enc = random_encoder(rng, _widths(rng, k))
    tr = enc.trace(rng.uniform(-1, 1, (1, enc.weights[0].shape[1])))
    J = encoder_jacobian(tr, enc.weights)
    bound = np.prod([np.linalg.norm(layer_jacobian(tr.layer_outputs[i + 1], W)) for i, W in enumerate(enc.weights)])
    assert np.linalg.norm(J) <= bound * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_single_layer_specialization(seed):
    rng = np.random.default_rng(seed)
    enc = random_encoder(rng, _widths(rng, 1))
    tr = enc.trace(rng.uniform(-1, 1, (3, enc.weights[0].shape[1])))
    deep = deepcae_penalty(tr, enc.weights).per_sample
    stacked = stacked_penalty(tr, enc.weights).per_sample
    closed = single_layer_penalty_tanh(tr.h, enc.weights[0]).per_sample
    scale = max(np.max(closed), 1.0)
    assert np.max(np.abs(deep - closed)) <= 1e-12 * scale
    assert np.max(np.abs(stacked - closed)) <= 1e-12 * scale


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_penalties_are_nonnegative(k, seed):
    rng = np.random.default_rng(seed)
    enc = random_encoder(rng, _widths(rng, k))
    tr = enc.trace(rng.uniform(-1, 1, (3, enc.weights[0].shape[1])))
    assert np.all(deepcae_penalty(tr, enc.weights).per_sample >= 0)
    assert np.all(stacked_penalty(tr, enc.weights).per_sample >= 0)


def test_forward_trace_validates_range_and_shapes():
    with pytest.raises(ValueError):
        ForwardTrace([np.zeros((1, 3)), np.full((1, 2), 1.5)])
    with pytest.raises(ShapeError):
        ForwardTrace([np.zeros((2, 3)), np.zeros((1, 2))])
