import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepcae.models import (LAMBDA_FLOOR, AutoencoderModel, EncoderSpec, build_loss, decode, dumps_model,
                            effective_lambda, encode, init_model, loads_model, loss, pca_encode, pca_fit,
                            pca_reconstruct, reconstruct, round_half_up)
from deepcae.tensor import ShapeError
from deepcae.train import TrainConfig, fit


def _zero_model(spec, variant="deepcae"):
    m = init_model(spec, variant)
    m.set_parameters([np.zeros_like(p) for p in m.parameters()])
    return m


def test_sizing_rule():
    assert EncoderSpec(10, 0.5, 1).widths == [10, 5]
    assert EncoderSpec(10, 0.5, 2).widths == [10, 8, 5]
    assert EncoderSpec(1, 0.5, 1).embedding_dim == 1
    assert round_half_up(2.5) == 3 and round_half_up(7.5) == 8 and round_half_up(7.49) == 7


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.floats(0.01, 1.0), st.integers(1, 5))
def test_widths_non_increasing(d_x, rate, k):
    w = EncoderSpec(d_x, rate, k).widths
    assert w[0] == d_x and w[-1] == max(1, round_half_up(d_x * rate)) and len(w) == k + 1
    assert all(a >= b >= 1 for a, b in zip(w, w[1:]))


def test_spec_rejects_bad_rate():
    with pytest.raises(ValueError):
        EncoderSpec(10, 0.0, 1)
    with pytest.raises(ValueError):
        EncoderSpec(10, 1.5, 1)


def test_init_is_deterministic_xavier():
    spec = EncoderSpec(10, 0.5, 2)
    a, b = init_model(spec, seed=3), init_model(spec, seed=3)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.parameters(), b.parameters()))
    for layer in a.layers:
        out, n_in = layer.W.shape
        assert np.all(np.abs(layer.W) <= np.sqrt(6 / (n_in + out)))
        assert not layer.b.any()
    assert init_model(spec, seed=4).parameters()[0].tobytes() != a.parameters()[0].tobytes()


def test_decoder_mirrors_encoder():
    m = init_model(EncoderSpec(10, 0.5, 2))
    assert [l.W.shape for l in m.encoder] == [(8, 10), (5, 8)]
    assert [l.W.shape for l in m.decoder] == [(8, 5), (10, 8)]


def test_encode_decode_examples():
    spec = EncoderSpec(6, 0.5, 2)
    X = np.random.default_rng(0).uniform(-1, 1, (4, 6))
    Z, trace = encode(_zero_model(spec), X)
    assert not Z.any() and trace.k == 2 and trace.x.shape == (4, 6)
    assert not decode(_zero_model(spec), np.ones((4, 3))).any()

    m = init_model(EncoderSpec(4, 1.0, 1))
    m.set_parameters([np.eye(4), np.zeros(4), np.eye(4), np.zeros(4)])
    X = np.random.default_rng(1).uniform(-1, 1, (3, 4))
    assert np.array_equal(encode(m, X)[0], np.tanh(X))

    m = init_model(spec, seed=2)
    X = np.random.default_rng(2).uniform(-1, 1, (5, 6))
    assert reconstruct(m, X).shape == X.shape
    with pytest.raises(ShapeError):
        encode(m, np.zeros((2, 5)))
    with pytest.raises(ShapeError):
        decode(m, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        encode(m, np.full((1, 6), np.nan))


def test_training_improves_round_trip():
    rng = np.random.default_rng(0)
    centers = rng.uniform(-0.6, 0.6, (3, 8))
    X = np.clip(centers[rng.integers(0, 3, 300)] + rng.normal(0, 0.1, (300, 8)), -1, 1)
    model = init_model(EncoderSpec(8, 0.5, 1), "deepcae", 1e-3, seed=0)
    before = np.mean((reconstruct(model, X) - X) ** 2)
    res = fit(model, X[:240], X[240:], TrainConfig(learning_rate=3e-3, lam=1e-3, batch_size=32, max_epochs=200))
    after = np.mean((reconstruct(res.model, X) - X) ** 2)
    assert after < before


def test_loss_examples():
    X = np.random.default_rng(3).uniform(-1, 1, (6, 8))
    for variant in ("standard", "deepcae", "stacked_cae"):
        total, recon, pen = loss(init_model(EncoderSpec(8, 0.5, 2), variant, 0.0, seed=1), X)
        assert total == recon
        assert pen == 0.0
    total, recon, _ = loss(init_model(EncoderSpec(8, 0.5, 2), "standard", 5.0, seed=1), X)
    assert total == recon

    deep = init_model(EncoderSpec(8, 0.5, 1), "deepcae", 0.3, seed=5)
    stacked = init_model(EncoderSpec(8, 0.5, 1), "stacked_cae", 0.3, seed=5)
    assert abs(loss(deep, X)[0] - loss(stacked, X)[0]) <= 1e-12
    assert loss(deep, X)[2] > 0


def test_loss_terms_are_on_tape():
    g = build_loss(init_model(EncoderSpec(6, 0.5, 2), "deepcae", 0.1, seed=0),
                   np.random.default_rng(0).uniform(-1, 1, (3, 6)))
    assert all(r.tape is g.tape for r in (g.total, g.recon, g.penalty))


def test_lambda_floor(caplog):
    with caplog.at_level(logging.WARNING):
        assert effective_lambda("deepcae", 1e-12) == LAMBDA_FLOOR
    assert "clamped" in caplog.text
    assert effective_lambda("deepcae", 0.0) == 0.0
    assert effective_lambda("stacked", 0.5) == 0.5
    assert effective_lambda("standard", 0.5) == 0.0
    with pytest.raises(ValueError):
        effective_lambda("deepcae", -1.0)
    with pytest.raises(ValueError):
        effective_lambda("vae", 1.0)


def test_model_serialization_round_trip():
    m = init_model(EncoderSpec(7, 0.5, 2), "stacked_cae", 0.02, seed=9)
    text = dumps_model(m)
    back = loads_model(text)
    assert back.variant == m.variant and back.lam == m.lam and back.spec == m.spec
    assert all(a.tobytes() == b.tobytes() for a, b in zip(m.parameters(), back.parameters()))
    assert dumps_model(back) == text
    doc = json.loads(text)
    assert doc["format_version"] == 1
    doc["format_version"] = 99
    with pytest.raises(ValueError):
        loads_model(json.dumps(doc))


def test_model_rejects_mismatched_layers():
    m = init_model(EncoderSpec(6, 0.5, 1))
    with pytest.raises(ShapeError):
        AutoencoderModel(m.spec, "deepcae", 0.0, m.decoder, m.encoder)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(1, 3), st.integers(0, 1000))
def test_decoder_output_bounded(d_x, k, seed):
    m = init_model(EncoderSpec(d_x, 0.5, k), seed=seed)
    m.set_parameters([p * 50 for p in m.parameters()])
    out = reconstruct(m, np.random.default_rng(seed).uniform(-1, 1, (4, d_x)))
    assert np.all(np.abs(out) <= 1.0)


# --- PCA baseline ---------------------------------------------------------

def test_pca_exact_subspace_and_full_rank():
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.normal(size=(6, 2)))[0]
    X = rng.normal(size=(50, 2)) @ basis.T + rng.normal(size=6)
    assert np.mean((pca_reconstruct(pca_fit(X, 2), X) - X) ** 2) < 1e-10
    X = rng.normal(size=(30, 5))
    assert np.mean((pca_reconstruct(pca_fit(X, 5), X) - X) ** 2) < 1e-20


def test_pca_discarded_eigenvalue_identity():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(400, 8)) @ rng.normal(size=(8, 8))
    base = pca_fit(X, 3)
    mse = np.mean((pca_reconstruct(base, X) - X) ** 2)
    Xc = X - X.mean(axis=0)
    discarded = np.sort(np.linalg.eigvalsh(Xc.T @ Xc / len(X)))[::-1][3:]
    assert abs(mse - discarded.sum() / 8) / mse < 1e-8


def test_pca_sign_convention_and_degenerate_flag():
    rng = np.random.default_rng(2)
    base = pca_fit(rng.normal(size=(40, 5)), 3)
    pivot = np.argmax(np.abs(base.axes), axis=0)
    assert np.all(base.axes[pivot, np.arange(3)] > 0)
    assert not base.degenerate
    X = np.zeros((10, 4))
    X[:, 0] = rng.normal(size=10)
    flat = pca_fit(X, 3)
    assert flat.degenerate
    assert np.allclose(flat.axes.T @ flat.axes, np.eye(3), atol=1e-10)
    assert pca_encode(flat, X).shape == (10, 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10**6))
def test_pca_axes_orthonormal_and_error_monotone(d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, d)) @ rng.normal(size=(d, d))
    errs = []
    for m in range(1, d + 1):
        base = pca_fit(X, m)
        assert np.allclose(base.axes.T @ base.axes, np.eye(m), atol=1e-10)
        errs.append(np.mean((pca_reconstruct(base, X) - X) ** 2))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
