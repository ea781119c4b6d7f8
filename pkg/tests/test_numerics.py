import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tla.numerics import (
    check_distribution,
    cosine_similarity,
    finite_diff_grad,
    kmeans,
    softmax,
    softmax_rows,
    sym_eigen,
)


def test_softmax_known_values():
    # oracle: exp(1),exp(2),exp(3) normalized, computed offline
    out = softmax([1.0, 2.0, 3.0])
    expect = np.array([0.09003057317038046, 0.24472847105479767, 0.6652409557748219])
    assert np.allclose(out, expect, atol=1e-15)
    assert np.allclose(softmax([0.0, 0.0]), [0.5, 0.5])


def test_softmax_rejects_bad_input():
    with pytest.raises(ValueError):
        softmax([])
    with pytest.raises(ValueError):
        softmax([1.0, np.nan])
    with pytest.raises(ValueError):
        softmax([np.inf, 0.0])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariant(logits, shift):
    a = softmax(logits)
    b = softmax(np.array(logits) + shift)
    assert abs(a.sum() - 1.0) < 1e-12
    assert np.all(a >= 0)
    assert np.allclose(a, b, atol=1e-12)


def test_softmax_rows_matches_per_row():
    rng = np.random.default_rng(0)
    z = rng.normal(0, 3, size=(7, 5))
    rows = softmax_rows(z)
    for i in range(7):
        assert np.array_equal(rows[i], softmax(z[i]))


def test_check_distribution():
    p = check_distribution([0.25, 0.75])
    assert p.dtype == np.float64
    with pytest.raises(ValueError):
        check_distribution([0.5, 0.6])
    with pytest.raises(ValueError):
        check_distribution([1.5, -0.5])
    with pytest.raises(ValueError):
        check_distribution([])


def test_cosine_similarity_known_value():
    # dot = -1.5, |a| = sqrt(5), |b| = 1.5 -> -1.5 / (1.5 sqrt(5))
    got = cosine_similarity([1.0, 0.0, 2.0], [0.5, 1.0, -1.0])
    assert abs(got - (-0.4472135954999579)) < 1e-15
    assert abs(cosine_similarity([2.0, 0.0], [5.0, 0.0]) - 1.0) < 1e-15


def test_cosine_similarity_rejects_zero_vector():
    with pytest.raises(ValueError, match="zero vector"):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        cosine_similarity([1.0], [1.0, 2.0])


def test_sym_eigen_two_by_two_oracle():
    # [[2,1],[1,2]] has eigenpairs (1, (1,-1)/sqrt2) and (3, (1,1)/sqrt2)
    w, v = sym_eigen([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(w, [1.0, 3.0], atol=1e-12)
    s = 1.0 / np.sqrt(2.0)
    # columns up to sign
    assert min(np.abs(v[:, 0] - [s, -s]).max(), np.abs(v[:, 0] + [s, -s]).max()) < 1e-12
    assert min(np.abs(v[:, 1] - [s, s]).max(), np.abs(v[:, 1] + [s, s]).max()) < 1e-12


def test_sym_eigen_diagonal_sorted():
    w, v = sym_eigen(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(w, [1.0, 2.0, 3.0])
    assert np.allclose(np.abs(v), np.eye(3)[:, [1, 2, 0]])


def test_sym_eigen_matches_lapack():
    rng = np.random.default_rng(7)
    for n in (2, 5, 16, 31):
        m = rng.normal(0, 1, size=(n, n))
        m = m + m.T
        w, v = sym_eigen(m)
        assert np.allclose(w, np.linalg.eigvalsh(m), atol=1e-9)
        assert np.allclose(v.T @ v, np.eye(n), atol=1e-10)
        assert np.allclose(m @ v, v * w, atol=1e-9)
        assert np.all(np.diff(w) >= 0)


def test_sym_eigen_scale_robust():
    rng = np.random.default_rng(3)
    base = rng.normal(size=(8, 8))
    base = base + base.T
    for scale in (1e-8, 1.0, 1e8):
        m = base * scale
        w, v = sym_eigen(m)
        resid = np.abs(m @ v - v * w).max()
        assert resid < 1e-9 * max(1.0, np.abs(m).max())


def test_sym_eigen_rejects_bad_matrices():
    with pytest.raises(ValueError, match="square"):
        sym_eigen(np.ones((2, 3)))
    with pytest.raises(ValueError, match="not symmetric"):
        sym_eigen([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="non-finite"):
        sym_eigen([[np.nan, 0.0], [0.0, 1.0]])


def test_sym_eigen_one_by_one():
    w, v = sym_eigen([[4.0]])
    assert w[0] == 4.0 and v[0, 0] == 1.0


@st.composite
def small_symmetric(draw):
    n = draw(st.integers(2, 6))
    vals = draw(
        st.lists(st.floats(-10, 10), min_size=n * n, max_size=n * n)
    )
    m = np.array(vals).reshape(n, n)
    return m + m.T


@given(small_symmetric())
@settings(max_examples=60, deadline=None)
def test_sym_eigen_reconstructs(m):
    w, v = sym_eigen(m)
    assert np.allclose(v @ np.diag(w) @ v.T, m, atol=1e-8)


def _sse(points, assign):
    total = 0.0
    for g in np.unique(assign):
        sub = points[assign == g]
        total += ((sub - sub.mean(axis=0)) ** 2).sum()
    return total


def test_kmeans_matches_brute_force():
    # small enough to enumerate every 2-partition
    rng = np.random.default_rng(5)
    pts = np.vstack([rng.normal(0, 0.4, (4, 2)), rng.normal(6, 0.4, (4, 2))])
    assign = kmeans(pts, 2, seed=0)
    best = np.inf
    for mask in range(1, 2**8 - 1):
        cand = np.array([(mask >> i) & 1 for i in range(8)])
        best = min(best, _sse(pts, cand))
    assert abs(_sse(pts, assign) - best) < 1e-9


def test_kmeans_deterministic_and_complete():
    rng = np.random.default_rng(11)
    pts = rng.normal(size=(30, 3))
    a1 = kmeans(pts, 4, seed=9)
    a2 = kmeans(pts, 4, seed=9)
    assert np.array_equal(a1, a2)
    assert set(np.unique(a1)) == {0, 1, 2, 3}  # no empty cluster


def test_kmeans_edge_cases():
    pts = np.array([[0.0], [1.0], [2.0]])
    assert np.array_equal(np.sort(np.unique(kmeans(pts, 3, seed=0))), [0, 1, 2])
    with pytest.raises(ValueError):
        kmeans(pts, 0, seed=0)
    with pytest.raises(ValueError):
        kmeans(pts, 4, seed=0)


def test_finite_diff_grad_quadratic():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])

    def f(x):
        return float(x @ a @ x)

    x0 = np.array([1.5, -0.5])
    g = finite_diff_grad(f, x0)
    assert np.allclose(g, 2.0 * a @ x0, atol=1e-6)


def test_finite_diff_grad_does_not_mutate():
    x0 = np.array([1.0, 2.0])
    saved = x0.copy()
    finite_diff_grad(lambda x: float((x**2).sum()), x0)
    assert np.array_equal(x0, saved)
