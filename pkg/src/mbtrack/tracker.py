"""Pyramidal outer loop with repeated Taylor re-linearization.

Three solvers share the same coarse-to-fine loop:

* ``klt``       per-feature Gauss-Newton on the quadratic data term,
* ``l1klt``     the ADMM with the subspace regularizer disabled,
* ``multibody`` the full five-block ADMM with the epipolar
                self-expressiveness regularizer.

Coordinates and displacements are scaled by ``2**-level`` on the way
down the pyramid and rescaled on the way up; the result of a coarser
level initializes the next finer one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .admm import AdmmDiagnostics, AdmmParams, run_admm
from .epipolar import EpipolarEmbedding
from .imaging import GrayImage, build_pyramid, gradient
from .linearize import FeatureSet, LinearizedModel, build_H_g, linearize
from .admm import solve_2x2

TRACKED = "tracked"
LOST = "lost"
DEGENERATE = "degenerate"

METHODS = ("klt", "l1klt", "multibody")


class TrackerError(ValueError):
    pass


@dataclass
class TrackerConfig:
    method: str = "multibody"
    levels: int = 4
    half: int = 3  # 7x7 patches
    max_taylor: int = 10
    eps_outer: float = 0.01  # px, per-feature displacement change
    admm: AdmmParams = field(default_factory=AdmmParams)

    def __post_init__(self):
        if self.method not in METHODS:
            raise TrackerError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.levels < 1 or self.max_taylor < 1:
            raise TrackerError("levels and max_taylor must be at least 1")
        if self.eps_outer <= 0:
            raise TrackerError("eps_outer must be positive")
        if self.half < 1:
            raise TrackerError("patch half-size must be at least 1")

    @property
    def patch_size(self) -> int:
        return 2 * self.half + 1


@dataclass
class LevelDiag:
    level: int
    taylor_iters: int
    admm_iters: list[int]
    admm_converged: list[bool]


@dataclass
class TrackResult:
    """Per-frame-pair tracking output.

    ``u`` is the (N, 2) displacement in full-resolution pixels; lost
    features carry their last solved displacement (zero if lost on
    entry). ``C`` is the coefficient matrix over the features listed in
    ``active_ids`` (multibody only).
    """

    u: np.ndarray
    C: np.ndarray | None
    active_ids: np.ndarray
    status: np.ndarray
    levels: list[LevelDiag]
    final_admm: AdmmDiagnostics | None = None


def klt_baseline_solve(model: LinearizedModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature Gauss-Newton step ``u_i = H_i^{-1} sum_j tau_ij gI_ij^T``.

    Returns the (N, 2) solution and a degeneracy mask; degenerate
    features (singular H_i) get u_i = 0 and should keep their previous
    estimate.
    """
    H, g = build_H_g(model, 0.0, 0.0, 1.0)
    trace = H[:, 0, 0] + H[:, 1, 1]
    det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
    u, bad = solve_2x2(H, g)
    bad = bad | (det <= 1e-14 * np.maximum(trace, 1e-300) ** 2)
    u[bad] = 0.0
    return u, bad


def _solve_level(model, centers_active, u_expand, cfg, collect_C):
    """One inner solve at the current linearization point."""
    if cfg.method == "klt":
        u_new, bad = klt_baseline_solve(model)
        u_new[bad] = u_expand[bad]
        return u_new, bad, None, None
    if cfg.method == "l1klt":
        res = run_admm(model, None, cfg.admm, u_expand.ravel())
        return res.u.reshape(-1, 2), np.zeros(model.n, dtype=bool), None, res.diagnostics
    emb = EpipolarEmbedding.for_tracking(centers_active)
    res = run_admm(model, emb, cfg.admm, u_expand.ravel())
    C = res.C if collect_C else None
    return res.u.reshape(-1, 2), np.zeros(model.n, dtype=bool), C, res.diagnostics


def track_frame(
    template: GrayImage,
    image: GrayImage,
    fs: FeatureSet,
    cfg: TrackerConfig,
    u0: np.ndarray | None = None,
    status0: np.ndarray | None = None,
) -> TrackResult:
    """Track ``fs`` from ``template`` into ``image`` (Algorithm-2 loop).

    ``u0`` is the initial full-resolution displacement (defaults to
    zero); features whose entire patch leaves the frame at any level are
    flagged lost and keep their last displacement.
    """
    if template.data.shape != image.data.shape:
        raise TrackerError("template and image dimensions differ")
    n = fs.n
    u_full = (
        np.zeros((n, 2)) if u0 is None else np.asarray(u0, dtype=np.float64).reshape(n, 2).copy()
    )
    status = (
        np.full(n, TRACKED, dtype=object)
        if status0 is None
        else np.asarray(status0, dtype=object).copy()
    )

    coarse = 2 ** (cfg.levels - 1)
    min_dim = min(image.width, image.height) // coarse
    if min_dim < 2 * cfg.patch_size:
        raise TrackerError(
            f"{cfg.levels} levels leave a coarsest dimension of {min_dim} px, "
            f"below twice the {cfg.patch_size} px patch"
        )

    pyr_t = build_pyramid(template, cfg.levels)
    pyr_i = build_pyramid(image, cfg.levels)

    level_diags: list[LevelDiag] = []
    C_last = None
    C_ids = np.array([], dtype=int)
    final_admm = None
    last_degen = np.zeros(n, dtype=bool)

    for level in range(cfg.levels - 1, -1, -1):
        scale = float(2**level)
        img_l = pyr_i.levels[level]
        tmpl_l = pyr_t.levels[level]
        grad_field = gradient(img_l)
        diag = LevelDiag(level=level, taylor_iters=0, admm_iters=[], admm_converged=[])

        u_level = u_full / scale
        for _ in range(cfg.max_taylor):
            active = np.flatnonzero(status == TRACKED)
            if active.size == 0:
                break
            centers_l = fs.centers[active] / scale
            fs_l = FeatureSet(centers_l, cfg.half)
            u_expand = u_level[active]
            model = linearize(img_l, tmpl_l, fs_l, u_expand, grad_field)
            if model.lost.any():
                status[active[model.lost]] = LOST
                keep = ~model.lost
                active = active[keep]
                if active.size == 0:
                    break
                centers_l = centers_l[keep]
                u_expand = u_expand[keep]
                model = LinearizedModel(
                    grad=model.grad[keep],
                    tau=model.tau[keep],
                    u0=model.u0[keep],
                    mask=model.mask[keep],
                    lost=model.lost[keep],
                )
            collect_C = cfg.method == "multibody" and level == 0
            u_new, degen, C, admm_diag = _solve_level(model, centers_l, u_expand, cfg, collect_C)
            diag.taylor_iters += 1
            if admm_diag is not None:
                diag.admm_iters.append(admm_diag.n_iter)
                diag.admm_converged.append(admm_diag.converged)
                if level == 0:
                    final_admm = admm_diag
            last_degen[active] = degen
            if C is not None:
                C_last = C
                C_ids = active.copy()
            delta = np.sqrt(((u_new - u_expand) ** 2).sum(axis=1)).max()
            u_level[active] = u_new
            if delta < cfg.eps_outer:
                break
        u_full = u_level * scale
        level_diags.append(diag)

    status[(status == TRACKED) & last_degen] = DEGENERATE
    return TrackResult(
        u=u_full,
        C=C_last,
        active_ids=C_ids,
        status=status,
        levels=level_diags,
        final_admm=final_admm,
    )


def track_sequence(
    frames: list[GrayImage],
    fs0: FeatureSet,
    cfg: TrackerConfig,
) -> list[TrackResult]:
    """Chain :func:`track_frame` over consecutive frames.

    The template for frame ``t+1`` is frame ``t``; feature positions
    advance by the solved displacement and each new pair starts from a
    zero displacement guess. Lost features stay lost.
    """
    if len(frames) < 2:
        raise TrackerError("need at least 2 frames to track")
    centers = fs0.centers.copy()
    status = np.full(fs0.n, TRACKED, dtype=object)
    results = []
    for t in range(len(frames) - 1):
        fs_t = FeatureSet(centers, fs0.half)
        res = track_frame(frames[t], frames[t + 1], fs_t, cfg, status0=status)
        res.u[res.status == LOST] = 0.0
        results.append(res)
        centers = centers + res.u
        # Degeneracy is a per-frame condition; only loss is permanent.
        status = np.where(res.status == LOST, LOST, TRACKED).astype(object)
    return results


def positions_from_results(
    centers0: np.ndarray, results: list[TrackResult]
) -> np.ndarray:
    """Cumulative positions (F, N, 2) implied by per-pair displacements."""
    pos = [np.asarray(centers0, dtype=np.float64)]
    for res in results:
        pos.append(pos[-1] + res.u)
    return np.stack(pos)
