import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tla.classify import (
    ALPHA_GRID,
    FusionConfig,
    LinearSvmModel,
    SvmConfig,
    fuse,
    load_svm,
    save_svm,
    svm_objective,
    svm_predict,
    svm_predict_batch,
    svm_train,
    top1_error,
    tune_alpha,
)


def _blobs(seed, k=3, n=15, dim=4, spread=5.0, noise=0.3):
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(k) / k
    centers = np.zeros((k, dim))
    centers[:, 0] = spread * np.cos(ang)
    centers[:, 1] = spread * np.sin(ang)
    x = np.vstack([c + rng.normal(0, noise, size=(n, dim)) for c in centers])
    y = np.repeat(np.arange(k), n)
    return x, y


def test_svm_separates_blobs():
    x, y = _blobs(0)
    model, history = svm_train(x, y)
    preds = svm_predict_batch(model, x)
    assert (preds.argmax(axis=1) == y).mean() == 1.0
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_svm_history_final_matches_model_objective():
    x, y = _blobs(1)
    model, history = svm_train(x, y, SvmConfig(C=0.5, epochs=50))
    assert abs(svm_objective(model, x, y, c=0.5) - history[-1]) < 1e-12


def test_svm_objective_hand_computed():
    # one point per class, fixed weights: check the formula by hand
    model = LinearSvmModel(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.0, 0.0]))
    x = np.array([[2.0, 0.0], [0.0, 0.5]])
    y = np.array([0, 1])
    # class 0: margins +2 (target +1, hinge 0), 0 (target -1, hinge 1);
    #   J0 = 0.5*1 + (0+1)/2 = 1.0
    # class 1: margins 0 (target -1, hinge 1), 0.5 (target +1, hinge 0.5);
    #   J1 = 0.5*1 + (1+0.5)/2 = 1.25
    assert abs(svm_objective(model, x, y, c=1.0) - 1.125) < 1e-12


def test_svm_duplicate_invariance():
    x, y = _blobs(2)
    m1, h1 = svm_train(x, y)
    m2, h2 = svm_train(np.vstack([x, x]), np.concatenate([y, y]))
    assert np.allclose(m1.weights, m2.weights, atol=1e-12)
    assert np.allclose(m1.bias, m2.bias, atol=1e-12)
    assert np.allclose(h1, h2, atol=1e-12)


def test_svm_input_validation():
    x, y = _blobs(3)
    with pytest.raises(ValueError, match="misaligned"):
        svm_train(x, y[:-1])
    with pytest.raises(ValueError, match="2 classes"):
        svm_train(x[:5], np.zeros(5, dtype=int))
    with pytest.raises(ValueError, match="C must be positive"):
        svm_train(x, y, SvmConfig(C=0.0))


@given(st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_svm_objective_monotone_property(seed):
    x, y = _blobs(seed, noise=1.0)
    _, history = svm_train(x, y, SvmConfig(epochs=30))
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_predict_softmax_consistent_with_margins():
    x, y = _blobs(4)
    model, _ = svm_train(x, y)
    probs = svm_predict(model, x[0])
    assert abs(probs.sum() - 1.0) < 1e-12
    margins = model.weights @ x[0] + model.bias
    assert probs.argmax() == margins.argmax()
    batch = svm_predict_batch(model, x[:3])
    for i in range(3):
        assert np.array_equal(batch[i], svm_predict(model, x[i]))


def test_predict_dimension_checked():
    model = LinearSvmModel(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValueError, match="dim"):
        svm_predict(model, np.zeros(4))
    with pytest.raises(ValueError, match="dim"):
        svm_predict_batch(model, np.zeros((2, 4)))


def test_fuse_hand_values():
    a = np.array([0.8, 0.2])
    b = np.array([0.4, 0.6])
    out = fuse(a, b, FusionConfig(alpha=0.25))
    assert np.allclose(out, 0.25 * a + 0.75 * b, atol=1e-15)
    assert np.allclose(fuse(a, b, FusionConfig(alpha=1.0)), a)
    with pytest.raises(ValueError, match="mismatch"):
        fuse(a, np.array([0.1, 0.2, 0.7]), FusionConfig())


def test_fusion_config_validation():
    with pytest.raises(ValueError, match="alpha"):
        FusionConfig(alpha=1.5)


def test_top1_error_ties_to_lowest_class():
    preds = np.array([[0.5, 0.5], [0.3, 0.7]])
    # row 0 tie -> class 0
    assert top1_error(preds, [0, 1]) == 0.0
    assert top1_error(preds, [1, 1]) == 0.5
    with pytest.raises(ValueError):
        top1_error(np.zeros((0, 2)), [])


def test_alpha_grid_shape():
    assert len(ALPHA_GRID) == 21
    assert ALPHA_GRID[0] == 0.0 and ALPHA_GRID[-1] == 1.0
    assert abs(ALPHA_GRID[7] - 0.35) < 1e-12


def test_tune_alpha_prefers_accurate_stream():
    y = np.arange(3).repeat(10)
    good = np.eye(3)[y] * 0.9 + 0.1 / 3
    rng = np.random.default_rng(5)
    bad = rng.dirichlet(np.ones(3), size=30)
    cfg = tune_alpha(good, bad, y)
    # pure part stream errs, pure object stream is perfect
    assert top1_error(fuse(good, bad, cfg), y) <= top1_error(bad, y)
    assert cfg.alpha >= 0.5


def test_tune_alpha_tie_prefers_even_blend():
    y = np.array([0, 1])
    perfect = np.array([[0.9, 0.1], [0.1, 0.9]])
    # both streams identical: every alpha ties, 0.5 wins
    cfg = tune_alpha(perfect, perfect, y)
    assert cfg.alpha == 0.5


def test_svm_serialization_roundtrip_exact():
    x, y = _blobs(6)
    model, _ = svm_train(x, y)
    blob = save_svm(model)
    back = load_svm(blob)
    assert np.array_equal(back.weights, model.weights)
    assert np.array_equal(back.bias, model.bias)
    rng = np.random.default_rng(7)
    probe = rng.normal(size=(20, model.dim))
    assert np.array_equal(svm_predict_batch(model, probe), svm_predict_batch(back, probe))
    assert save_svm(back) == blob


def test_load_svm_rejects_malformed():
    model = LinearSvmModel(np.ones((2, 3)), np.zeros(2))
    blob = save_svm(model)
    with pytest.raises(ValueError, match="magic"):
        load_svm(b"BOGUS" + blob[5:])
    with pytest.raises(ValueError):
        load_svm(blob[:-4])
    with pytest.raises(ValueError):
        load_svm(blob + b"\x01")
