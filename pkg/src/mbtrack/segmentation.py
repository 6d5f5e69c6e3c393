"""Frame-by-frame motion segmentation from the coefficient matrix.

The solver's C encodes how each lifted correspondence is expressed by
the others; ``|C| + |C^T|`` with a zeroed diagonal is the affinity fed
to normalized-cut spectral clustering with a known motion count.
"""

from __future__ import annotations

import itertools
import warnings

import numpy as np
import scipy.linalg
import scipy.optimize

from .admm import soft_threshold


class SegmentationError(ValueError):
    pass


def affinity_from_C(C: np.ndarray) -> np.ndarray:
    """Symmetric nonnegative affinity ``|C| + |C^T|`` with zero diagonal."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise SegmentationError(f"C must be square, got {C.shape}")
    S = np.abs(C) + np.abs(C.T)
    np.fill_diagonal(S, 0.0)
    return S


def _kmeans(X: np.ndarray, k: int, rng: np.random.Generator, restarts: int = 20):
    """Seeded k-means++ with ``restarts`` restarts; best inertia wins."""
    n = X.shape[0]
    best_labels = None
    best_inertia = np.inf
    for _ in range(restarts):
        # k-means++ seeding
        centers = np.empty((k, X.shape[1]))
        centers[0] = X[rng.integers(n)]
        d2 = ((X - centers[0]) ** 2).sum(axis=1)
        for j in range(1, k):
            total = d2.sum()
            if total <= 0:
                centers[j] = X[rng.integers(n)]
            else:
                centers[j] = X[rng.choice(n, p=d2 / total)]
            d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
        labels = np.zeros(n, dtype=int)
        for _ in range(100):
            dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = dist.argmin(axis=1)
            for j in range(k):
                members = new_labels == j
                if members.any():
                    centers[j] = X[members].mean(axis=0)
                else:  # re-seed an empty cluster at the worst-served point
                    centers[j] = X[dist.min(axis=1).argmax()]
            if (new_labels == labels).all():
                labels = new_labels
                break
            labels = new_labels
        inertia = ((X - centers[labels]) ** 2).sum()
        if inertia < best_inertia - 1e-15:
            best_inertia = inertia
            best_labels = labels
    return best_labels


def spectral_cluster(S: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Normalized-cut spectral clustering with a known cluster count.

    Uses the symmetric-normalized Laplacian, the bottom-k eigenvectors,
    row normalization, and seeded k-means with 20 restarts. Deterministic
    for a fixed seed.
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if k < 1:
        raise SegmentationError("need at least one cluster")
    if n < k:
        raise SegmentationError(f"cannot split {n} points into {k} clusters")
    if k == 1:
        return np.zeros(n, dtype=int)
    deg = S.sum(axis=1)
    if not np.any(deg > 0):
        warnings.warn("all-zero affinity: labeling is arbitrary", stacklevel=2)
        return np.arange(n) % k
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    A_norm = S * dinv[:, None] * dinv[None, :]
    # Bottom-k eigenvectors of L_sym = I - A_norm are the top-k of A_norm.
    vals, vecs = scipy.linalg.eigh(A_norm)
    X = vecs[:, -k:]
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    X = np.where(norms > 0, X / np.maximum(norms, 1e-300), 0.0)
    rng = np.random.default_rng(seed)
    return _kmeans(X, k, rng).astype(int)


def _remap(labels: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, mapped = np.unique(labels, return_inverse=True)
    return mapped, len(uniq)


def segmentation_error(labels, truth) -> float:
    """Misclassified fraction under the best permutation of label ids.

    Exhaustive permutation search for up to 6 clusters, Hungarian
    assignment beyond.
    """
    labels = np.asarray(labels).ravel()
    truth = np.asarray(truth).ravel()
    if labels.size != truth.size:
        raise SegmentationError(
            f"label count mismatch: {labels.size} predictions vs {truth.size} truths"
        )
    if labels.size == 0:
        raise SegmentationError("empty labelings")
    pred, kp = _remap(labels)
    true, kt = _remap(truth)
    k = max(kp, kt)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (pred, true), 1)
    if k <= 6:
        best = max(
            sum(confusion[i, perm[i]] for i in range(k))
            for perm in itertools.permutations(range(k))
        )
    else:
        rows, cols = scipy.optimize.linear_sum_assignment(-confusion)
        best = confusion[rows, cols].sum()
    return 1.0 - best / labels.size


def self_expression_fixed_W(
    W: np.ndarray,
    lam: float = 1.0e4,
    rho0: float = 0.1,
    eta: float = 1.1,
    rho_max: float = 1e10,
    eps: float = 1e-8,
    max_iter: int = 500,
) -> np.ndarray:
    """Two-step baseline: min 1/2||C||_F^2 + lam||E||_1 s.t. W = WC + E.

    W stays fixed (tracks come from some other tracker), so this is a
    convex two-block ADMM over (C, E) only.
    """
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[1]
    C = np.zeros((n, n))
    E = np.zeros_like(W)
    Y1 = np.zeros_like(W)
    rho = rho0
    eye = np.eye(n)
    for _ in range(max_iter):
        E = soft_threshold(W - W @ C + Y1 / rho, lam / rho)
        factor = scipy.linalg.cho_factor(eye + rho * (W.T @ W), check_finite=False)
        C = scipy.linalg.cho_solve(
            factor, rho * (W.T @ (W - E + Y1 / rho)), check_finite=False
        )
        resid = W - W @ C - E
        Y1 = Y1 + rho * resid
        rho = min(eta * rho, rho_max)
        if np.abs(resid).max() <= eps:
            break
    return C
