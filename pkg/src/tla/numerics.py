"""Dense numeric primitives shared by the whole pipeline.

Everything here is 64-bit, deterministic, and dependency-free beyond numpy:
a stabilized softmax, cosine similarity, a cyclic Jacobi eigensolver for
symmetric matrices, seeded k-means with farthest-point initialization, and a
central-difference gradient estimator used as a test oracle.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "softmax",
    "cosine_similarity",
    "sym_eigen",
    "kmeans",
    "finite_diff_grad",
    "check_distribution",
]


def softmax(logits) -> np.ndarray:
    """Exp-normalize a vector of logits into a probability distribution.

    Max-shifted for stability, so the result is invariant to adding a
    constant to every logit.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty logits")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax for a 2-D batch of logits."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] == 0:
        raise ValueError("empty logits")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def check_distribution(p, tol: float = 1e-9) -> np.ndarray:
    """Validate that p is a probability distribution; returns it as an array."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a non-empty vector")
    if np.any(p < -tol) or np.any(p > 1 + tol):
        raise ValueError("distribution entries outside [0, 1]")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"distribution sums to {p.sum()!r}, not 1")
    return p


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero vector")
    return float(np.dot(a, b) / (na * nb))


def sym_eigen(m, sym_tol: float = 1e-12):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvectors as columns, orthonormal).
    Converges when the off-diagonal Frobenius norm drops below 1e-12.
    Matrices here are small (at most a few hundred), where Jacobi's
    robustness beats asymptotically faster methods.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    n = a.shape[0]
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite matrix")
    if np.max(np.abs(a - a.T)) > sym_tol * max(1.0, np.max(np.abs(a))):
        raise ValueError("matrix not symmetric")
    a = (a + a.T) / 2.0
    v = np.eye(n)
    if n == 1:
        return a.ravel().copy(), v

    off_tol = 1e-12 * max(1.0, float(np.linalg.norm(a)))
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(60):
        off = float(np.linalg.norm(a[off_mask]))
        if off < off_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                h = a[q, q] - a[p, p]
                if abs(h) + 100.0 * abs(apq) == abs(h):
                    # rotation angle below roundoff; apply the linearized form
                    t = apq / h
                else:
                    theta = h / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("jacobi sweep limit reached without convergence")

    evals = np.diag(a).copy()
    order = np.argsort(evals, kind="stable")
    return evals[order], v[:, order]


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, k) squared euclidean distances
    d = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", d, d)


def kmeans(points, k: int, seed: int, max_iter: int = 100) -> np.ndarray:
    """Seeded k-means; returns an assignment array of cluster ids.

    Initialization is farthest-point: the seed picks the first center, each
    later center is the point farthest from all chosen ones. Empty clusters
    are re-seeded with the point farthest from its current centroid, so every
    cluster ends non-empty. Deterministic for fixed (points, k, seed).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds point count {n}")

    rng = np.random.default_rng(seed)
    centers = np.empty((k, pts.shape[1]))
    first = int(rng.integers(n))
    centers[0] = pts[first]
    min_d = _sq_dists(pts, centers[:1]).ravel()
    for j in range(1, k):
        idx = int(np.argmax(min_d))
        centers[j] = pts[idx]
        min_d = np.minimum(min_d, _sq_dists(pts, centers[j : j + 1]).ravel())

    assign = np.argmin(_sq_dists(pts, centers), axis=1)
    for _ in range(max_iter):
        for j in range(k):
            mask = assign == j
            if mask.any():
                centers[j] = pts[mask].mean(axis=0)
            else:
                d_own = np.einsum(
                    "nd,nd->n", pts - centers[assign], pts - centers[assign]
                )
                worst = int(np.argmax(d_own))
                centers[j] = pts[worst]
                assign[worst] = j
        new_assign = np.argmin(_sq_dists(pts, centers), axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign.astype(np.int64)


def finite_diff_grad(f, x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function of a vector."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = g.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + eps
        fp = f(x)
        xf[i] = orig - eps
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * eps)
    return g
