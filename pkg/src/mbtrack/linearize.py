"""First-order Taylor model of the brightness-constancy data term.

Around an expansion displacement ``u0`` the per-pixel residual is
``A_ij(u) = gI_ij . u_i - tau_ij`` with ``gI_ij`` the current-image
gradient sampled at ``x_ij + u0_i`` and
``tau_ij = gI_ij . u0_i + T(x_ij) - I(x_ij + u0_i)``.

Pixels whose template or shifted sample falls outside the frame carry
zero gradient and zero offset, which removes them from the data term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import GrayImage, gradient
from .kernels import bilinear_many


@dataclass
class FeatureSet:
    """Tracked template points with square patches.

    Attributes
    ----------
    centers : (N, 2) float64 template coordinates (x, y)
    half : patch half-size h; the patch is (2h+1) x (2h+1)
    u : (2N,) stacked displacement vector, feature-major
    """

    centers: np.ndarray
    half: int
    u: np.ndarray = field(default=None)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if self.centers.shape[1] != 2:
            raise ValueError(f"centers must be (N, 2), got {self.centers.shape}")
        if self.half < 0:
            raise ValueError(f"negative patch half-size {self.half}")
        if self.u is None:
            self.u = np.zeros(2 * self.n)
        self.u = np.asarray(self.u, dtype=np.float64).ravel()
        if self.u.size != 2 * self.n:
            raise ValueError(f"u must have length {2 * self.n}, got {self.u.size}")

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    @property
    def patch_size(self) -> int:
        return 2 * self.half + 1

    @property
    def offsets(self) -> np.ndarray:
        """Patch grid offsets around each center, shape (p, 2), row-major."""
        r = np.arange(-self.half, self.half + 1, dtype=np.float64)
        ox, oy = np.meshgrid(r, r)
        return np.column_stack([ox.ravel(), oy.ravel()])

    def scaled(self, factor: float) -> "FeatureSet":
        return FeatureSet(self.centers * factor, self.half, self.u * factor)


@dataclass
class LinearizedModel:
    """Sampled gradients, offsets and validity masks at ``x + u0``."""

    grad: np.ndarray  # (N, p, 2) gradient rows; zero at masked pixels
    tau: np.ndarray  # (N, p) offsets; zero at masked pixels
    u0: np.ndarray  # (N, 2) expansion displacements
    mask: np.ndarray  # (N, p) bool, True where both samples are in-bounds
    lost: np.ndarray  # (N,) bool, True where the entire patch left the frame

    @property
    def n(self) -> int:
        return self.tau.shape[0]

    @property
    def n_pix(self) -> int:
        return self.tau.shape[1]


def linearize(
    image: GrayImage,
    template: GrayImage,
    fs: FeatureSet,
    u0: np.ndarray,
    grad_field: np.ndarray | None = None,
) -> LinearizedModel:
    """Build the Taylor model of ``image`` against ``template`` at ``u0``.

    ``grad_field`` may pass a precomputed :func:`mbtrack.imaging.gradient`
    of ``image`` to avoid recomputation across re-linearizations.
    """
    u0 = np.asarray(u0, dtype=np.float64).reshape(fs.n, 2)
    if grad_field is None:
        grad_field = gradient(image)
    offsets = fs.offsets
    tmpl_pos = fs.centers[:, None, :] + offsets[None, :, :]  # (N, p, 2)
    img_pos = tmpl_pos + u0[:, None, :]

    t_vals, t_clamp = bilinear_many(template.data, tmpl_pos[..., 0], tmpl_pos[..., 1])
    i_vals, i_clamp = bilinear_many(image.data, img_pos[..., 0], img_pos[..., 1])
    gx, _ = bilinear_many(grad_field[..., 0], img_pos[..., 0], img_pos[..., 1])
    gy, _ = bilinear_many(grad_field[..., 1], img_pos[..., 0], img_pos[..., 1])

    mask = ~(t_clamp | i_clamp)
    grad = np.stack([gx, gy], axis=-1)
    grad[~mask] = 0.0
    tau = np.einsum("npk,nk->np", grad, u0) + t_vals - i_vals
    tau[~mask] = 0.0
    lost = ~mask.any(axis=1)
    return LinearizedModel(grad=grad, tau=tau, u0=u0.copy(), mask=mask, lost=lost)


def residual_map(model: LinearizedModel, u: np.ndarray) -> np.ndarray:
    """Linearized residuals ``A_ij = gI_ij . u_i - tau_ij``, shape (N, p)."""
    u = np.asarray(u, dtype=np.float64).reshape(model.n, 2)
    return np.einsum("npk,nk->np", model.grad, u) - model.tau


def build_H_g(
    model: LinearizedModel,
    Y2: np.ndarray | float = 0.0,
    Z: np.ndarray | float = 0.0,
    rho: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature normal blocks H_i and right-hand vectors g_i.

    ``H_i = sum_j gI_ij^T gI_ij`` (2x2) and
    ``g_i = sum_j (Y2_ij + rho (tau_ij + Z_ij)) gI_ij^T``.

    Returns ``H`` shaped (N, 2, 2) and ``g`` shaped (N, 2).
    """
    H = np.einsum("npk,npl->nkl", model.grad, model.grad)
    coeff = Y2 + rho * (model.tau + Z)
    if np.isscalar(coeff):
        coeff = np.full_like(model.tau, coeff)
    g = np.einsum("np,npk->nk", np.broadcast_to(coeff, model.tau.shape), model.grad)
    return H, g


def blocks_to_matrix(H: np.ndarray) -> np.ndarray:
    """Assemble (N, 2, 2) blocks into the dense 2N x 2N block-diagonal matrix."""
    n = H.shape[0]
    out = np.zeros((2 * n, 2 * n))
    for i in range(n):
        out[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = H[i]
    return out
