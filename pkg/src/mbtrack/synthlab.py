"""Synthetic multi-body scenes with exact ground truth, plus brute-force
oracles that validate every closed-form solver update.

Bodies are textured planar cards moved rigidly in front of a pinhole
camera. Planarity keeps rendering exact (every frame is an analytic
warp of the same texture evaluated at pixel centers), so feature tracks
derived by projection are exact sub-pixel ground truth and the residual
of the brightness-constancy model at the truth is pure interpolation
error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .admm import AdmmParams, AdmmState
from .epipolar import (
    EpipolarEmbedding,
    FundamentalMatrix,
    fundamental_from_poses,
    reshape_m,
    vec,
)
from .imaging import GrayImage
from .linearize import LinearizedModel, residual_map

PRESETS = ("two-body", "checkerboard", "pure-translation", "single-body")

# Solver weights matched to the Hartley-normalized embedding at desk scale.
# The headline defaults (gamma 1.8e4, lam 1.0e4) were tuned against raw
# pixel-coordinate embeddings whose entries are 4-5 orders of magnitude
# larger; in the conditioned frame the same force balance sits near these
# values. Preset metadata carries them so runs on generated scenes can
# pick them up explicitly.
DESK_SCENE_WEIGHTS = {"gamma": 0.3, "lam": 1.0}


class SynthError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Textures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SinusoidTexture:
    """Band-limited sum of random sinusoids around mid-gray.

    Frequencies are in cycles per plane unit; keeping them moderate keeps
    the Taylor linearization error of the rendered images controllable.
    """

    freqs: np.ndarray  # (K, 2)
    amps: np.ndarray  # (K,)
    phases: np.ndarray  # (K,)

    @classmethod
    def random(cls, rng, n_waves=8, amp_total=0.42, f_lo=1.2, f_hi=3.2):
        angles = rng.uniform(0, 2 * np.pi, n_waves)
        mags = rng.uniform(f_lo, f_hi, n_waves)
        freqs = np.column_stack([mags * np.cos(angles), mags * np.sin(angles)])
        amps = rng.uniform(0.5, 1.0, n_waves)
        amps = amps / amps.sum() * amp_total
        phases = rng.uniform(0, 2 * np.pi, n_waves)
        return cls(freqs=freqs, amps=amps, phases=phases)

    def __call__(self, s, t):
        val = np.full(np.broadcast(s, t).shape, 0.5)
        for (fx, fy), a, ph in zip(self.freqs, self.amps, self.phases):
            val = val + a * np.sin(2 * np.pi * (fx * s + fy * t) + ph)
        return val


@dataclass(frozen=True)
class GridTexture:
    """Repetitive sinusoid grid (checkerboard-like ambiguity stressor).

    The local contrast of the fine carrier is modulated by a long-period
    envelope between ``amp_lo`` and ``amp_hi`` so that some patches are
    strong and some weak relative to the injected image noise. A weak
    smooth base pattern keeps coarse pyramid levels from going flat
    (low-passing the zero-mean carrier alone would erase all structure),
    while being far too weak to disambiguate the carrier lattice at the
    finest level.
    """

    period: float
    amp_lo: float = 0.18
    amp_hi: float = 0.38
    envelope_period: float = 1.3
    phase: float = 0.0

    def __call__(self, s, t):
        w = 2 * np.pi / self.period
        env = 0.5 + 0.5 * np.sin(2 * np.pi * s / self.envelope_period + 1.1) * np.sin(
            2 * np.pi * t / self.envelope_period + 0.4
        )
        amp = self.amp_lo + (self.amp_hi - self.amp_lo) * env
        base = 0.08 * np.sin(2 * np.pi * (0.35 * s + 0.2 * t) + self.phase) + 0.07 * np.sin(
            2 * np.pi * (-0.15 * s + 0.42 * t) + 2.0 * self.phase + 0.9
        )
        return 0.5 + base + amp * np.sin(w * s + self.phase) * np.sin(w * t + self.phase)


def _background(px, py):
    """Static, weakly textured backdrop."""
    return (
        0.45
        + 0.05 * np.sin(0.061 * px + 1.3)
        + 0.05 * np.sin(0.053 * py + 0.7)
        + 0.03 * np.sin(0.041 * (px + py) + 2.1)
    )


# ---------------------------------------------------------------------------
# Rigid bodies and rendering
# ---------------------------------------------------------------------------


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass
class RigidBodySpec:
    """Textured planar card with per-frame rigid poses.

    ``anchors`` are feature positions in body-plane coordinates (s, t);
    the card covers ``|s| <= extent[0]``, ``|t| <= extent[1]`` at z = 0
    in the body frame. ``poses`` maps body to camera coordinates.
    """

    anchors: np.ndarray  # (M, 2)
    extent: tuple[float, float]
    poses: list[tuple[np.ndarray, np.ndarray]]  # (R, t) per frame
    texture: object

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=np.float64))
        for R, _ in self.poses:
            if np.abs(R.T @ R - np.eye(3)).max() > 1e-12:
                raise SynthError("pose rotation is not orthonormal")


@dataclass
class SyntheticSequence:
    frames: list[GrayImage]
    tracks: np.ndarray  # (F, N, 2)
    labels: np.ndarray  # (N,)
    visible: np.ndarray  # (F, N) bool
    fundamentals: list[list[FundamentalMatrix | None]]  # [body][frame pair]
    K: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_features(self) -> int:
        return self.tracks.shape[1]


def _project(K, R, t, pts3):
    cam = pts3 @ R.T + t
    if np.any(cam[:, 2] <= 1e-9):
        raise SynthError("point behind camera")
    proj = cam @ K.T
    return proj[:, :2] / proj[:, 2:3]


def render_scene(
    bodies: list[RigidBodySpec],
    K: np.ndarray,
    n_frames: int,
    width: int = 256,
    height: int = 256,
    meta: dict | None = None,
) -> SyntheticSequence:
    """Render planar bodies over a static background with exact tracks.

    Bodies are composed by per-pixel depth (nearest wins). Per-body
    fundamental matrices between consecutive frames come from the
    relative poses; they are None for (numerically) zero relative motion.
    """
    if not bodies:
        raise SynthError("need at least one body")
    for body in bodies:
        if len(body.poses) != n_frames:
            raise SynthError("every body needs one pose per frame")
    K = np.asarray(K, dtype=np.float64)
    Kinv = np.linalg.inv(K)
    px, py = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    rays = np.stack([px, py, np.ones_like(px)], axis=-1) @ Kinv.T  # (H, W, 3)

    labels = np.concatenate([np.full(b.anchors.shape[0], k) for k, b in enumerate(bodies)])
    n_feat = labels.size
    tracks = np.zeros((n_frames, n_feat, 2))
    visible = np.ones((n_frames, n_feat), dtype=bool)
    frames = []

    for f in range(n_frames):
        img = _background(px, py)
        depth = np.full((height, width), np.inf)
        feat_depth = np.zeros(n_feat)
        feat_pix = np.zeros((n_feat, 2))
        col = 0
        for body in bodies:
            R, t = body.poses[f]
            normal = R[:, 2]
            offset = float(normal @ t)
            denom = rays @ normal
            valid = np.abs(denom) > 1e-12
            lam = np.where(valid, offset / np.where(valid, denom, 1.0), np.inf)
            hit = valid & (lam > 1e-9)
            lam_safe = np.where(hit, lam, 1.0)
            pts_c = rays * lam_safe[..., None]
            local = (pts_c - t) @ R  # body coordinates (s, t, ~0)
            inside = (
                hit
                & (np.abs(local[..., 0]) <= body.extent[0])
                & (np.abs(local[..., 1]) <= body.extent[1])
                & (lam < depth)
            )
            vals = body.texture(local[..., 0], local[..., 1])
            img = np.where(inside, vals, img)
            depth = np.where(inside, lam, depth)

            m = body.anchors.shape[0]
            pts3 = np.column_stack([body.anchors, np.zeros(m)])
            cam = pts3 @ R.T + t
            if np.any(cam[:, 2] <= 1e-9):
                raise SynthError("feature behind camera")
            tracks[f, col : col + m] = _project(K, R, t, pts3)
            feat_depth[col : col + m] = cam[:, 2]
            feat_pix[col : col + m] = tracks[f, col : col + m]
            col += m
        # Occlusion: a feature is visible when no other surface is closer
        # at its pixel.
        ix = np.clip(np.rint(feat_pix[:, 0]).astype(int), 0, width - 1)
        iy = np.clip(np.rint(feat_pix[:, 1]).astype(int), 0, height - 1)
        visible[f] = feat_depth <= depth[iy, ix] * (1.0 + 1e-3)
        frames.append(GrayImage(np.clip(img, 0.0, 1.0)))

    fundamentals = []
    for body in bodies:
        per_pair = []
        for f in range(n_frames - 1):
            R1, t1 = body.poses[f]
            R2, t2 = body.poses[f + 1]
            per_pair.append(fundamental_from_poses(K, R1, t1, R2, t2))
        fundamentals.append(per_pair)

    return SyntheticSequence(
        frames=frames,
        tracks=tracks,
        labels=labels,
        visible=visible,
        fundamentals=fundamentals,
        K=K,
        meta=dict(meta or {}),
    )


def _jittered_grid(rng, n, extent, margin, jitter=0.25):
    """About n anchor points spread over the card with a safety margin."""
    ex, ey = extent[0] - margin, extent[1] - margin
    if ex <= 0 or ey <= 0:
        raise SynthError("margin leaves no room for features")
    cols = int(math.ceil(math.sqrt(n * ex / ey)))
    rows = int(math.ceil(n / cols))
    xs = np.linspace(-ex, ex, cols)
    ys = np.linspace(-ey, ey, rows)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])[:n]
    step = np.array([2 * ex / max(cols - 1, 1), 2 * ey / max(rows - 1, 1)])
    return pts + rng.uniform(-jitter, jitter, pts.shape) * step


def _default_camera(size):
    f = float(size)
    c = (size - 1) / 2.0
    return np.array([[f, 0.0, c], [0.0, f, c], [0.0, 0.0, 1.0]])


def _linear_poses(r0, t0, dr, dt, n_frames):
    """Pose path with per-frame incremental rotation dr and translation dt."""
    poses = []
    for f in range(n_frames):
        R = rot_z(dr[2] * f) @ rot_y(dr[1] * f) @ rot_x(dr[0] * f) @ r0
        t = np.asarray(t0, dtype=np.float64) + np.asarray(dt, dtype=np.float64) * f
        poses.append((R, t))
    return poses


def make_preset(
    name: str,
    seed: int = 0,
    n_frames: int = 10,
    features_per_body: int = 30,
    size: int = 256,
) -> SyntheticSequence:
    """Build one of the named synthetic scenes.

    two-body          two smooth-textured cards translating oppositely
    checkerboard      the two-body layout with repetitive grid texture
                      and mixed patch contrast
    pure-translation  one fronto-parallel card at constant depth with a
                      constant per-frame pixel shift (degenerate motion)
    single-body       one card under a general rotation + translation
    """
    if name not in PRESETS:
        raise SynthError(f"unknown preset {name!r}; expected one of {PRESETS}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, PRESETS.index(name))))
    K = _default_camera(size)
    depth = 5.0
    # A card of half-extent e at depth d spans 2 e f / d pixels.
    unit_px = K[0, 0] / depth
    meta = {
        "preset": name,
        "seed": int(seed),
        "frames": int(n_frames),
        "size": int(size),
        "repetitive_texture": name == "checkerboard",
        "recommended_gamma": DESK_SCENE_WEIGHTS["gamma"],
        "recommended_lambda": DESK_SCENE_WEIGHTS["lam"],
    }

    if name in ("two-body", "checkerboard"):
        ext = (1.05, 1.45)
        off = 1.22  # card centers at x = +-off
        # Opposite horizontal motion plus mild differing vertical drift;
        # ~1.5 px/frame horizontal at the default camera.
        d_px = 1.5 if name == "two-body" else 2.0
        dx = d_px / unit_px
        dy = 0.35 / unit_px
        body_kwargs = []
        if name == "two-body":
            tex_a = SinusoidTexture.random(rng, f_lo=1.2, f_hi=2.6)
            tex_b = SinusoidTexture.random(rng, f_lo=1.2, f_hi=2.6)
        else:
            period = 8.0 / unit_px  # ~8 px repetition
            tex_a = GridTexture(period=period, phase=rng.uniform(0, 2 * np.pi))
            tex_b = GridTexture(period=period, phase=rng.uniform(0, 2 * np.pi))
        # Opposite horizontal drift with opposite-sign vertical components:
        # distinct motion directions keep the two epipolar subspaces apart.
        body_kwargs.append(dict(center=(-off, 0.0), dt=(dx, dy, 0.0), texture=tex_a))
        body_kwargs.append(dict(center=(+off, 0.0), dt=(-dx, dy, 0.0), texture=tex_b))
        bodies = []
        for kw in body_kwargs:
            anchors = _jittered_grid(rng, features_per_body, ext, margin=0.42)
            span = (np.asarray(kw["dt"]) * (n_frames - 1))[:2]
            t0 = np.array([kw["center"][0] - span[0] / 2, kw["center"][1] - span[1] / 2, depth])
            bodies.append(
                RigidBodySpec(
                    anchors=anchors,
                    extent=ext,
                    poses=_linear_poses(np.eye(3), t0, (0, 0, 0), kw["dt"], n_frames),
                    texture=kw["texture"],
                )
            )
        return render_scene(bodies, K, n_frames, size, size, meta)

    if name == "pure-translation":
        ext = (1.9, 1.9)
        anchors = _jittered_grid(rng, 2 * features_per_body, ext, margin=0.5)
        shift_px = np.array([1.5, -0.8])
        dt = np.array([shift_px[0] / unit_px, shift_px[1] / unit_px, 0.0])
        span = dt[:2] * (n_frames - 1)
        t0 = np.array([-span[0] / 2, -span[1] / 2, depth])
        body = RigidBodySpec(
            anchors=anchors,
            extent=ext,
            poses=_linear_poses(np.eye(3), t0, (0, 0, 0), dt, n_frames),
            texture=SinusoidTexture.random(rng),
        )
        meta["pixel_shift"] = shift_px.tolist()
        return render_scene([body], K, n_frames, size, size, meta)

    # single-body: general motion (translation + rotation, slight tilt)
    ext = (1.7, 1.7)
    anchors = _jittered_grid(rng, 2 * features_per_body, ext, margin=0.5)
    r0 = rot_x(0.12) @ rot_y(-0.08)
    dt = np.array([0.018, 0.012, 0.01])
    dr = (0.004, 0.006, 0.008)
    t0 = np.array([-dt[0] * (n_frames - 1) / 2, -dt[1] * (n_frames - 1) / 2, depth])
    body = RigidBodySpec(
        anchors=anchors,
        extent=ext,
        poses=_linear_poses(r0, t0, dr, dt, n_frames),
        texture=SinusoidTexture.random(rng),
    )
    return render_scene([body], K, n_frames, size, size, meta)


def synthesize_rigid_tracks(
    n_points: int,
    poses: list[tuple[np.ndarray, np.ndarray]],
    K: np.ndarray | None = None,
    seed: int = 0,
    depth_spread: float = 2.0,
):
    """Exact projections of a random non-planar cloud under rigid poses.

    Returns ``(tracks (F, N, 2), fundamentals per frame pair)``. Used by
    the subspace-rank studies, which need full 8-dimensional epipolar
    subspaces that planar cards cannot produce.
    """
    rng = np.random.default_rng(seed)
    if K is None:
        K = _default_camera(256)
    pts = np.column_stack(
        [
            rng.uniform(-1.5, 1.5, n_points),
            rng.uniform(-1.5, 1.5, n_points),
            rng.uniform(-depth_spread / 2, depth_spread / 2, n_points),
        ]
    )
    tracks = np.stack([_project(K, R, t, pts) for R, t in poses])
    fundamentals = [
        fundamental_from_poses(K, poses[f][0], poses[f][1], poses[f + 1][0], poses[f + 1][1])
        for f in range(len(poses) - 1)
    ]
    return tracks, fundamentals


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def oracle_objective(u, C, E, Z, m, embedding, model, params, rho) -> float:
    """Reformulated objective plus rho/2-weighted squared violations.

    Recomputed term by term, independently of the solver's bookkeeping.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    m = np.asarray(m, dtype=np.float64).ravel()
    val = params.gamma * np.abs(Z).sum()
    val += 0.5 * np.sum(np.asarray(C) ** 2)
    val += params.lam * np.abs(E).sum()
    A = residual_map(model, u)
    viol = np.sum((Z - A) ** 2)
    if embedding is not None:
        W = embedding.B + reshape_m(m)
        viol += np.sum((W - W @ C - E) ** 2)
        viol += np.sum((m - vec(embedding.apply_P(u))) ** 2)
    return float(val + 0.5 * rho * viol)


def augmented_lagrangian(model, embedding, params, state: AdmmState) -> float:
    """Full L_rho including the multiplier inner products."""
    A = residual_map(model, state.u)
    W = embedding.B + reshape_m(state.m)
    Pu = vec(embedding.apply_P(state.u))
    r_w = W - W @ state.C - state.E
    r_z = state.Z - A
    r_m = state.m - Pu
    val = (
        params.gamma * np.abs(state.Z).sum()
        + 0.5 * np.sum(state.C**2)
        + params.lam * np.abs(state.E).sum()
    )
    val += state.y @ r_m + np.sum(state.Y1 * r_w) + np.sum(state.Y2 * r_z)
    val += 0.5 * state.rho * (np.sum(r_w**2) + np.sum(r_z**2) + np.sum(r_m**2))
    return float(val)


def _ternary_min(fun, lo, hi, iters=300):
    """Ternary search on a convex scalar function.

    Runs in extended precision: float64 function comparisons plateau at
    |x - x*| ~ sqrt(eps), which is too coarse for the 1e-8 oracle gate.
    """
    lo = np.longdouble(lo)
    hi = np.longdouble(hi)
    third = np.longdouble(1.0) / 3.0
    for _ in range(iters):
        m1 = lo + (hi - lo) * third
        m2 = hi - (hi - lo) * third
        if fun(m1) <= fun(m2):
            hi = m2
        else:
            lo = m1
    return float(0.5 * (lo + hi))


def _cg(matvec, rhs, tol=1e-13, max_iter=None):
    """Conjugate gradients on an SPD operator, flat-vector interface."""
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = r @ r
    rhs_norm = math.sqrt(rhs @ rhs)
    if rhs_norm == 0:
        return x
    if max_iter is None:
        max_iter = 10 * rhs.size + 50
    for _ in range(max_iter):
        Ap = matvec(p)
        alpha = rs / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = r @ r
        if math.sqrt(rs_new) <= tol * rhs_norm:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def oracle_minimize_block(model, embedding, params, state: AdmmState, block: str):
    """Minimize L_rho over one block by a generic method.

    Thresholding blocks (Z, E) use per-element ternary search; quadratic
    blocks (C, u, m) use conjugate gradients on the stationarity system.
    The result is independent of the closed-form update path.
    """
    rho = state.rho
    if block == "Z":
        A = state.A
        gamma = np.longdouble(params.gamma)
        rho_l = np.longdouble(rho)
        out = np.empty_like(A)
        for idx in np.ndindex(A.shape):
            a = np.longdouble(A[idx])
            y2 = np.longdouble(state.Y2[idx])

            def fz(z, a=a, y2=y2):
                return gamma * abs(z) + y2 * z + 0.5 * rho_l * (z - a) ** 2

            center = float(a - y2 / rho_l)
            span = params.gamma / rho + 2.0 * (1.0 + abs(center))
            out[idx] = _ternary_min(fz, center - span, center + span)
        return out

    if block == "E":
        R = state.W - state.W @ state.C
        lam = np.longdouble(params.lam)
        rho_l = np.longdouble(rho)
        out = np.empty_like(R)
        for idx in np.ndindex(R.shape):
            r = np.longdouble(R[idx])
            y1 = np.longdouble(state.Y1[idx])

            def fe(e, r=r, y1=y1):
                return lam * abs(e) - y1 * e + 0.5 * rho_l * (r - e) ** 2

            center = float(r + y1 / rho_l)
            span = params.lam / rho + 2.0 * (1.0 + abs(center))
            out[idx] = _ternary_min(fe, center - span, center + span)
        return out

    if block == "C":
        W = state.W
        n = W.shape[1]

        def matvec(cvec):
            Cm = cvec.reshape(n, n)
            return (Cm + rho * (W.T @ (W @ Cm))).ravel()

        rhs = (W.T @ state.Y1 + rho * (W.T @ (W - state.E))).ravel()
        return _cg(matvec, rhs).reshape(n, n)

    if block == "u":
        n = model.n

        def matvec(uvec):
            un = uvec.reshape(n, 2)
            Hu = np.einsum("npk,npl,nl->nk", model.grad, model.grad, un)
            out = rho * Hu
            if embedding is not None:
                PU = embedding.apply_P(uvec)
                out = out + rho * embedding.apply_Pt(PU).reshape(n, 2)
            return out.ravel()

        coeff = state.Y2 + rho * (model.tau + state.Z)
        rhs = np.einsum("np,npk->nk", coeff, model.grad).ravel()
        if embedding is not None:
            rhs = rhs + embedding.apply_Pt(reshape_m(state.y) + rho * reshape_m(state.m))
        return _cg(matvec, rhs)

    if block == "m":
        n = state.C.shape[0]
        IC = np.eye(n) - state.C
        Q = IC @ IC.T
        G = reshape_m(state.y) / rho - embedding.apply_P(state.u)
        T = (state.Y1 / rho - state.E) @ IC.T

        def matvec(mvec):
            M = reshape_m(mvec)
            return vec(rho * (M @ (Q + np.eye(n))))

        rhs = vec(-rho * (G + embedding.B @ Q + T))
        return _cg(matvec, rhs)

    raise ValueError(f"unknown block {block!r}")


def random_admm_instance(rng, n=6, half=1, with_embedding=True):
    """Random small solver instance for oracle and stationarity tests."""
    p = (2 * half + 1) ** 2
    grad = rng.normal(0.0, 0.7, (n, p, 2))
    tau = rng.normal(0.0, 0.5, (n, p))
    mask = np.ones((n, p), dtype=bool)
    model = LinearizedModel(
        grad=grad, tau=tau, u0=np.zeros((n, 2)), mask=mask, lost=np.zeros(n, dtype=bool)
    )
    embedding = None
    if with_embedding:
        pts = rng.uniform(-1.2, 1.2, (n, 2))
        embedding = EpipolarEmbedding.from_points(pts)
    params = AdmmParams(
        gamma=float(rng.uniform(0.2, 2.0)),
        lam=float(rng.uniform(0.2, 2.0)),
        rho0=1.0,
    )
    state = AdmmState.initialize(model, embedding, params, rng.normal(0, 0.5, 2 * n))
    state.rho = float(rng.uniform(0.5, 2.0))
    state.Z = rng.normal(0, 0.6, (n, p))
    state.Y2 = rng.normal(0, 0.6, (n, p))
    if with_embedding:
        state.E = rng.normal(0, 0.5, (9, n))
        state.C = rng.normal(0, 0.3, (n, n))
        state.Y1 = rng.normal(0, 0.5, (9, n))
        state.y = rng.normal(0, 0.5, 9 * n)
        state.m = rng.normal(0, 0.8, 9 * n)
        state.W = embedding.B + reshape_m(state.m)
    return model, embedding, params, state
