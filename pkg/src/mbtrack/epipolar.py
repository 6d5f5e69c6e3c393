"""Epipolar subspace embedding: lifted correspondence vectors and the
sparse lifting map that makes the embedding affine in the displacements.

For a template point ``xb = (x, y, 1)`` and its tracked position
``xb' = xb + (u, v, 0)`` the lifted vector is ``w = vec(xb' xb^T)`` with
column-major vec, i.e. ``w = kron(xb, xb')``. Stacking all features,
``vec(W) = b + P u`` where ``b`` stacks ``kron(xb_i, xb_i)`` and ``P`` is
block-diagonal with per-feature 9x2 blocks (the first two columns of
``kron(xb_i, I_3)``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class EpipolarError(ValueError):
    pass


def _as_homogeneous(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 2:
        return np.array([p[0], p[1], 1.0])
    if p.size == 3:
        if p[2] != 1.0:
            raise EpipolarError(f"homogeneous point must have third coordinate 1, got {p[2]}")
        return p.astype(np.float64)
    raise EpipolarError(f"point must have 2 or 3 coordinates, got {p.size}")


def embed_point(x_template, x_tracked) -> np.ndarray:
    """Lifted 9-vector ``vec(xb' xb^T)`` of one correspondence.

    Ordering: ``(x x', x y', x, y x', y y', y, x', y', 1)``.
    """
    xb = _as_homogeneous(x_template)
    xbp = _as_homogeneous(x_tracked)
    return np.kron(xb, xbp)


def lifting_blocks(points: np.ndarray) -> np.ndarray:
    """Per-feature 9x2 blocks of the lifting matrix P, stacked (N, 9, 2).

    Column k of block i holds the template coordinates ``(x_i, y_i, 1)``
    at rows ``(k, 3+k, 6+k)``; all other entries are zero.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    blocks = np.zeros((n, 9, 2))
    x = points[:, 0]
    y = points[:, 1]
    for k in range(2):
        blocks[:, 0 + k, k] = x
        blocks[:, 3 + k, k] = y
        blocks[:, 6 + k, k] = 1.0
    return blocks


def build_P_b(points) -> tuple[sp.csc_matrix, np.ndarray]:
    """Sparse lifting matrix P (9N x 2N) and base vector b (9N,).

    ``b + P u`` equals the stacked :func:`embed_point` of
    ``(xb_i, xb_i + u_i)`` for any displacement vector ``u``.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 1:
        raise EpipolarError(f"expected (N, 2) template points, got {points.shape}")
    n = points.shape[0]
    blocks = lifting_blocks(points)
    b = np.einsum("ni,nj->nij", np.c_[points, np.ones(n)], np.c_[points, np.ones(n)])
    b = b.reshape(n, 9).ravel()
    rows = []
    cols = []
    vals = []
    nz_rows = np.array([[0, 3, 6], [1, 4, 7]])
    for i in range(n):
        for k in range(2):
            rows.extend(9 * i + nz_rows[k])
            cols.extend([2 * i + k] * 3)
            vals.extend(blocks[i, nz_rows[k], k])
    P = sp.csc_matrix((vals, (rows, cols)), shape=(9 * n, 2 * n))
    return P, b


def reshape_m(m: np.ndarray) -> np.ndarray:
    """Column-major reshape of a 9N vector to its 9xN matrix form."""
    m = np.asarray(m, dtype=np.float64).ravel()
    if m.size % 9 != 0:
        raise EpipolarError(f"vector length {m.size} not divisible by 9")
    return m.reshape((9, m.size // 9), order="F")


def vec(M: np.ndarray) -> np.ndarray:
    """Column-major vectorization; inverse of :func:`reshape_m`."""
    M = np.asarray(M, dtype=np.float64)
    return M.reshape(-1, order="F")


@dataclass(frozen=True)
class NormTransform:
    """Isotropic similarity mapping pixel coordinates to a conditioned frame.

    ``x_norm = scale * (x_px - center)``; displacements transform as
    ``u_norm = scale * u_px``.
    """

    scale: float
    center: np.ndarray  # (2,)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.center) * self.scale

    def invert(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) / self.scale + self.center

    def matrix(self) -> np.ndarray:
        s, (cx, cy) = self.scale, self.center
        return np.array([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])


def normalize_coords(points: np.ndarray) -> tuple[NormTransform, np.ndarray]:
    """Hartley-style normalization: zero mean, RMS radius sqrt(2).

    Returns the transform and the transformed points. Raises on a
    degenerate (all coincident) point set.
    """
    points = np.asarray(points, dtype=np.float64)
    center = points.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((points - center) ** 2, axis=1)))
    if rms <= 0:
        raise EpipolarError("degenerate feature set: all points coincide")
    t = NormTransform(scale=np.sqrt(2.0) / rms, center=center)
    return t, t.apply(points)


@dataclass(frozen=True)
class EpipolarEmbedding:
    """Embedding data consumed by the ADMM solver.

    ``blocks`` already fold in the coordinate-normalization scale, so
    ``vec(W) = b + P u`` holds for displacements ``u`` in the caller's
    pixel units while ``W`` lives in the conditioned frame.
    """

    points: np.ndarray  # (N, 2) conditioned template coordinates
    blocks: np.ndarray  # (N, 9, 2) lifting blocks (displacement scale folded in)
    b: np.ndarray  # (9N,)
    norm: NormTransform | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def B(self) -> np.ndarray:
        return reshape_m(self.b)

    def apply_P(self, u: np.ndarray) -> np.ndarray:
        """``P u`` in matrix form (9, N); ``u`` is the stacked 2N vector."""
        un = np.asarray(u, dtype=np.float64).reshape(self.n, 2)
        return np.einsum("nij,nj->ni", self.blocks, un).T

    def apply_Pt(self, V: np.ndarray) -> np.ndarray:
        """``P^T vec(V)`` for a (9, N) matrix V, returned as a 2N vector."""
        return np.einsum("nij,in->nj", self.blocks, V).ravel()

    def PtP(self) -> np.ndarray:
        """Per-feature 2x2 diagonal blocks of ``P^T P``, shape (N, 2, 2)."""
        return np.einsum("nik,nil->nkl", self.blocks, self.blocks)

    def P_matrix(self) -> sp.csc_matrix:
        n = self.n
        rows, cols, vals = [], [], []
        nz_rows = np.array([[0, 3, 6], [1, 4, 7]])
        for i in range(n):
            for k in range(2):
                rows.extend(9 * i + nz_rows[k])
                cols.extend([2 * i + k] * 3)
                vals.extend(self.blocks[i, nz_rows[k], k])
        return sp.csc_matrix((vals, (rows, cols)), shape=(9 * n, 2 * n))

    def W_of(self, u: np.ndarray) -> np.ndarray:
        """Data matrix W for displacement u, shape (9, N)."""
        return self.B + self.apply_P(u)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "EpipolarEmbedding":
        """Embedding in the raw coordinates of ``points`` (no conditioning)."""
        points = np.asarray(points, dtype=np.float64)
        _, b = build_P_b(points)
        return cls(points=points, blocks=lifting_blocks(points), b=b, norm=None)

    @classmethod
    def for_tracking(cls, centers_px: np.ndarray) -> "EpipolarEmbedding":
        """Conditioned embedding for pixel coordinates.

        Template points are Hartley-normalized before lifting; the
        normalization scale is folded into the lifting blocks so the
        solver's displacement variable stays in pixel units. A single
        point (where the RMS-radius normalization is undefined) is
        centered with unit scale.
        """
        centers_px = np.atleast_2d(np.asarray(centers_px, dtype=np.float64))
        if centers_px.shape[0] < 2:
            norm = NormTransform(scale=1.0, center=centers_px.mean(axis=0))
            pts = norm.apply(centers_px)
        else:
            norm, pts = normalize_coords(centers_px)
        _, b = build_P_b(pts)
        return cls(points=pts, blocks=lifting_blocks(pts) * norm.scale, b=b, norm=norm)


def subspace_rank(W: np.ndarray, rel_tol: float = 1e-8) -> int:
    """Numerical rank of the 9xN embedding matrix.

    Counts singular values above ``rel_tol`` times the largest; requires
    at least 9 columns.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.shape[0] != 9:
        raise EpipolarError(f"expected a 9xN matrix, got {W.shape}")
    if W.shape[1] < 9:
        raise EpipolarError(f"need N >= 9 columns for a rank estimate, got {W.shape[1]}")
    svals = np.linalg.svd(W, compute_uv=False)
    return int(np.sum(svals > rel_tol * svals[0]))


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 fundamental matrix with unit-norm vectorization."""

    F: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.F, dtype=np.float64)
        if F.shape != (3, 3):
            raise EpipolarError(f"fundamental matrix must be 3x3, got {F.shape}")
        nrm = np.linalg.norm(F)
        if nrm == 0:
            raise EpipolarError("zero fundamental matrix")
        F = F / nrm
        svals = np.linalg.svd(F, compute_uv=False)
        if svals[2] > 1e-10 * svals[0]:
            raise EpipolarError(f"matrix is not rank 2 (sigma3/sigma1 = {svals[2] / svals[0]:.2e})")
        object.__setattr__(self, "F", F)

    @property
    def f(self) -> np.ndarray:
        """Column-major vectorization, so that for any correspondence
        ``xb'^T F xb == f . embed_point(xb, xb')``."""
        return self.F.reshape(-1, order="F")

    def residual(self, x_template, x_tracked) -> float:
        xb = _as_homogeneous(x_template)
        xbp = _as_homogeneous(x_tracked)
        return float(xbp @ self.F @ xb)


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def fundamental_from_poses(K: np.ndarray, R1, t1, R2, t2) -> FundamentalMatrix | None:
    """F relating projections under two body-to-camera poses.

    Returns None for (numerically) zero relative translation, where F is
    undefined.
    """
    K = np.asarray(K, dtype=np.float64)
    R1, R2 = np.asarray(R1, float), np.asarray(R2, float)
    t1, t2 = np.asarray(t1, float).ravel(), np.asarray(t2, float).ravel()
    R_rel = R2 @ R1.T
    t_rel = t2 - R_rel @ t1
    if np.linalg.norm(t_rel) < 1e-12:
        return None
    Ki = np.linalg.inv(K)
    return FundamentalMatrix(Ki.T @ skew(t_rel) @ R_rel @ Ki)
