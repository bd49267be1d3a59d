"""2-D projection of token embeddings.

Follows the UMAP construction: exact kNN graph, smoothed fuzzy memberships,
symmetrization, spectral initialization, then attract/repel optimization with
negative sampling. Updates are batch-synchronous with a fixed NumPy RNG and
deterministic scatter-adds, so one input and random_state reproduce the same
coordinates bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import curve_fit
from scipy.spatial.distance import cdist


class ProjectionError(Exception):
    pass


def _smooth_knn_sigmas(knn_dists: np.ndarray, rho: np.ndarray,
                       n_iter: int = 64) -> np.ndarray:
    """Per-point kernel widths so each point's membership mass is log2(k)."""
    n, k = knn_dists.shape
    target = np.log2(k)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    adjusted = np.maximum(knn_dists - rho[:, None], 0.0)
    for _ in range(n_iter):
        psum = np.exp(-adjusted / mid[:, None]).sum(axis=1)
        too_high = psum > target
        hi = np.where(too_high, mid, hi)
        lo = np.where(too_high, lo, mid)
        mid = np.where(np.isinf(hi), mid * 2.0, (lo + hi) / 2.0)
    scale = max(float(knn_dists.mean()), 1e-12)
    return np.maximum(mid, 1e-3 * scale)


def _fuzzy_graph(x: np.ndarray, n_neighbors: int) -> np.ndarray:
    d = cdist(x, x)
    order = np.argsort(d, axis=1, kind="stable")
    knn_idx = order[:, 1:n_neighbors + 1]
    knn_d = np.take_along_axis(d, knn_idx, axis=1)
    rho = knn_d[:, 0]
    sigma = _smooth_knn_sigmas(knn_d, rho)
    vals = np.exp(-np.maximum(knn_d - rho[:, None], 0.0) / sigma[:, None])
    n = x.shape[0]
    w = np.zeros((n, n))
    rows = np.repeat(np.arange(n), n_neighbors)
    w[rows, knn_idx.ravel()] = vals.ravel()
    return w + w.T - w * w.T


def _spectral_init(w: np.ndarray) -> np.ndarray:
    deg = w.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-12)), 0.0)
    lap = np.eye(w.shape[0]) - (inv_sqrt[:, None] * w) * inv_sqrt[None, :]
    _, vecs = eigh(lap)
    emb = vecs[:, 1:3].copy()
    peak = np.abs(emb).max()
    if peak > 0:
        emb *= 10.0 / peak
    return emb


def _fit_ab(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    xv = np.linspace(0.0, spread * 3.0, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    (a, b), _ = curve_fit(curve, xv, yv)
    return float(a), float(b)


def umap_project(token_vectors, n_neighbors: int = 15, min_dist: float = 0.1,
                 random_state: int = 1, n_epochs: int = 200,
                 negative_samples: int = 5) -> np.ndarray:
    """Projects row vectors to 2-D; output row i corresponds to input row i."""
    x = np.asarray(token_vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ProjectionError(f"expected a 2-D array of vectors, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ProjectionError("input vectors must be finite")
    n = x.shape[0]
    if n < n_neighbors + 1:
        raise ProjectionError(
            f"{n} vectors cannot support n_neighbors={n_neighbors}; "
            f"supply at least {n_neighbors + 1} vectors or lower n_neighbors")

    w = _fuzzy_graph(x, n_neighbors)
    emb = _spectral_init(w)
    a, b = _fit_ab(min_dist)

    ei, ej = np.nonzero(np.triu(w, k=1))
    weight = w[ei, ej]
    weight = weight / weight.max()
    rng = np.random.default_rng(random_state)

    for epoch in range(n_epochs):
        alpha = 1.0 - epoch / n_epochs
        diff = emb[ei] - emb[ej]
        d2 = np.maximum((diff * diff).sum(axis=1), 1e-12)
        coef = (-2.0 * a * b * d2 ** (b - 1.0)) / (1.0 + a * d2 ** b)
        grad = np.clip(coef[:, None] * diff, -4.0, 4.0) * weight[:, None]
        np.add.at(emb, ei, alpha * grad)
        np.add.at(emb, ej, -alpha * grad)

        negs = rng.integers(0, n, size=(ei.size, negative_samples))
        for t in range(negative_samples):
            other = negs[:, t]
            diff = emb[ei] - emb[other]
            d2 = np.maximum((diff * diff).sum(axis=1), 1e-12)
            coef = (2.0 * b) / ((0.001 + d2) * (1.0 + a * d2 ** b))
            grad = np.clip(coef[:, None] * diff, -4.0, 4.0) * weight[:, None]
            grad[other == ei] = 0.0
            np.add.at(emb, ei, alpha * grad)

    return emb
