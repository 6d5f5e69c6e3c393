"""Five-block ADMM with closed-form updates.

Minimizes, for the current Taylor model,

    gamma ||Z||_1 + 1/2 ||C||_F^2 + lam ||E||_1
    s.t.  Z = A_(u),  W_(m) = W_(m) C + E,  m = P u,

by cyclic closed-form updates of Z, E, C, u, m followed by dual ascent
on the three multipliers and geometric growth of the penalty rho.

Update order and refresh policy: within one sweep, Z uses the residual
map of the previous sweep's u; E and C use the previous sweep's W; the
u-solve uses this sweep's Z and the previous m; the m-solve uses this
sweep's C, E, u. A and W are then refreshed before the multiplier step.

The m-update is the stationarity solution of the augmented Lagrangian,
``M (Q + I) = -(G + B Q + T)`` with ``Q = (I-C)(I-C)^T`` and
``T = (Y1/rho - E)(I - C^T)``; a finite-difference oracle in the test
suite gates this derivation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import backend
from .epipolar import EpipolarEmbedding, reshape_m, vec
from .linearize import LinearizedModel, build_H_g, residual_map

_REG_EPS = 1e-12  # trace-scaled Tikhonov floor for the u-solve
_LOWRANK_MIN_N = 32  # feature count above which the rank-structured sweep pays off


class AdmmNonFinite(RuntimeError):
    """Raised when an iterate stops being finite (ill-conditioned solve)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class AdmmParams:
    """Solver weights and penalty schedule.

    ``gamma`` weights the L1 data term and ``lam`` the sparse outlier
    term; the penalty grows as ``rho <- min(eta rho, rho_max)`` every
    sweep and all three constraint residuals must fall below ``eps`` in
    max-norm for convergence.
    """

    gamma: float = 1.8e4
    lam: float = 1.0e4
    rho0: float = 0.1
    rho_max: float = 1e10
    eta: float = 1.1
    eps: float = 1e-6
    max_iter: int = 300

    def __post_init__(self):
        if self.gamma <= 0 or self.lam <= 0:
            raise ValueError("gamma and lam must be positive")
        if self.eta <= 1:
            raise ValueError("penalty growth eta must exceed 1")
        if self.rho0 <= 0 or self.rho0 > self.rho_max:
            raise ValueError("need 0 < rho0 <= rho_max")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class AdmmState:
    """All primal/dual variables of one solve, plus cached A and W."""

    Z: np.ndarray  # (N, p)
    E: np.ndarray  # (9, N)
    C: np.ndarray  # (N, N)
    u: np.ndarray  # (2N,)
    m: np.ndarray  # (9N,)
    Y1: np.ndarray  # (9, N)
    Y2: np.ndarray  # (N, p)
    y: np.ndarray  # (9N,)
    rho: float
    A: np.ndarray  # cached residual map for current u
    W: np.ndarray  # cached embedding matrix for current m

    @classmethod
    def initialize(cls, model, embedding, params, u0) -> "AdmmState":
        n, p = model.tau.shape
        u = np.asarray(u0, dtype=np.float64).ravel().copy()
        if u.size != 2 * n:
            raise ValueError(f"u0 must have length {2 * n}, got {u.size}")
        A = residual_map(model, u)
        if embedding is not None:
            M = embedding.apply_P(u)
            W = embedding.B + M
            m = vec(M)
        else:
            W = np.zeros((9, n))
            m = np.zeros(9 * n)
        return cls(
            Z=np.zeros((n, p)),
            E=np.zeros((9, n)),
            C=np.zeros((n, n)),
            u=u,
            m=m,
            Y1=np.zeros((9, n)),
            Y2=np.zeros((n, p)),
            y=np.zeros(9 * n),
            rho=params.rho0,
            A=A,
            W=W,
        )


@dataclass
class AdmmDiagnostics:
    """Per-iteration residuals, merit value and penalty."""

    residual_m: np.ndarray
    residual_W: np.ndarray
    residual_Z: np.ndarray
    objective: np.ndarray
    rho: np.ndarray
    converged: bool
    n_iter: int
    aborted: bool = False

    def to_csv(self, path) -> None:
        path = Path(path)
        lines = ["iteration,residual_m,residual_W,residual_Z,objective,rho"]
        for i in range(self.n_iter):
            lines.append(
                f"{i},{self.residual_m[i]:.12e},{self.residual_W[i]:.12e},"
                f"{self.residual_Z[i]:.12e},{self.objective[i]:.12e},{self.rho[i]:.12e}"
            )
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("\n".join(lines) + "\n")
        tmp.replace(path)


@dataclass
class AdmmResult:
    u: np.ndarray  # (2N,)
    C: np.ndarray | None
    diagnostics: AdmmDiagnostics
    state: AdmmState


def soft_threshold(x, thresh):
    """Proximal map of ``thresh * |.|_1``: sign(x) * max(|x| - thresh, 0)."""
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def update_Z(state: AdmmState, params: AdmmParams) -> np.ndarray:
    """Soft-threshold of ``A_(u) - Y2/rho`` at level ``gamma/rho``."""
    return soft_threshold(state.A - state.Y2 / state.rho, params.gamma / state.rho)


def update_E(state: AdmmState, params: AdmmParams) -> np.ndarray:
    """Soft-threshold of ``W - WC + Y1/rho`` at level ``lam/rho``."""
    return soft_threshold(
        state.W - state.W @ state.C + state.Y1 / state.rho, params.lam / state.rho
    )


def update_C(state: AdmmState, params: AdmmParams) -> np.ndarray:
    """SPD solve of ``(I + rho W^T W) C = rho W^T (W - E + Y1/rho)``."""
    W = state.W
    n = W.shape[1]
    lhs = np.eye(n) + state.rho * (W.T @ W)
    rhs = state.rho * (W.T @ (W - state.E + state.Y1 / state.rho))
    factor = scipy.linalg.cho_factor(lhs, check_finite=False)
    return scipy.linalg.cho_solve(factor, rhs, check_finite=False)


def _u_system(state, model, embedding):
    """Per-feature 2x2 systems of the rho-scaled u-update."""
    n = model.n
    H, g_scaled = build_H_g(model, state.Y2 / state.rho, state.Z, 1.0)
    lhs = H
    rhs = g_scaled
    if embedding is not None:
        lhs = lhs + embedding.PtP()
        V = reshape_m(state.y) / state.rho + reshape_m(state.m)
        rhs = rhs + embedding.apply_Pt(V).reshape(n, 2)
    trace = lhs[:, 0, 0].sum() + lhs[:, 1, 1].sum()
    delta = _REG_EPS * trace / (2 * n)
    lhs = lhs.copy()
    lhs[:, 0, 0] += delta
    lhs[:, 1, 1] += delta
    return lhs, rhs


def solve_2x2(lhs: np.ndarray, rhs: np.ndarray):
    """Vectorized symmetric 2x2 solves; flags non-invertible blocks."""
    a = lhs[:, 0, 0]
    b = lhs[:, 0, 1]
    c = lhs[:, 1, 1]
    det = a * c - b * b
    bad = ~np.isfinite(det) | (det <= 0)
    det_safe = np.where(bad, 1.0, det)
    ux = (c * rhs[:, 0] - b * rhs[:, 1]) / det_safe
    uy = (a * rhs[:, 1] - b * rhs[:, 0]) / det_safe
    out = np.column_stack([ux, uy])
    out[bad] = 0.0
    return out, bad


def update_u(
    state: AdmmState,
    model: LinearizedModel,
    embedding: EpipolarEmbedding | None,
    params: AdmmParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``(rho P^T P + rho H) u = g + P^T y + rho P^T m``.

    Returns the stacked 2N solution and a per-feature degeneracy mask
    (True where the regularized block was still singular; those features
    keep their previous displacement).
    """
    lhs, rhs = _u_system(state, model, embedding)
    u_new, bad = solve_2x2(lhs, rhs)
    if bad.any():
        u_new[bad] = state.u.reshape(-1, 2)[bad]
    return u_new.ravel(), bad


def solve_m_parts(G, B, C, E, Y1, rho):
    """Stationarity solve ``M (Q + I) = -(G + B Q + T)`` of the m-block."""
    n = C.shape[0]
    IC = np.eye(n) - C
    Q = IC @ IC.T
    T = (Y1 / rho - E) @ IC.T
    rhs = -(G + B @ Q + T)
    factor = scipy.linalg.cho_factor(Q + np.eye(n), check_finite=False)
    return scipy.linalg.cho_solve(factor, rhs.T, check_finite=False).T


def update_m(
    state: AdmmState, embedding: EpipolarEmbedding, params: AdmmParams
) -> np.ndarray:
    """Closed-form m-update (vectorized form of the matrix solve)."""
    G = reshape_m(state.y) / state.rho - embedding.apply_P(state.u)
    M = solve_m_parts(G, embedding.B, state.C, state.E, state.Y1, state.rho)
    return vec(M)


def refresh(state: AdmmState, model, embedding) -> None:
    """Recompute the cached A_(u) and W_(m) after a sweep."""
    state.A = residual_map(model, state.u)
    if embedding is not None:
        state.W = embedding.B + reshape_m(state.m)


def constraint_residuals(state: AdmmState, embedding) -> tuple:
    """Matrix-form residuals (m - Pu, W - WC - E, Z - A) for current state."""
    r_Z = state.Z - state.A
    if embedding is None:
        return None, None, r_Z
    r_W = state.W - state.W @ state.C - state.E
    r_m = reshape_m(state.m) - embedding.apply_P(state.u)
    return r_m, r_W, r_Z


def update_multipliers(state: AdmmState, embedding, params: AdmmParams) -> AdmmState:
    """Dual ascent on Y1, Y2, y and penalty growth ``rho <- min(eta rho, rho_max)``."""
    r_m, r_W, r_Z = constraint_residuals(state, embedding)
    state.Y2 = state.Y2 + state.rho * r_Z
    if embedding is not None:
        state.Y1 = state.Y1 + state.rho * r_W
        state.y = state.y + state.rho * vec(r_m)
    state.rho = min(params.eta * state.rho, params.rho_max)
    return state


def merit_value(state: AdmmState, embedding, params: AdmmParams) -> float:
    """Objective of the reformulated problem plus rho/2-weighted violations."""
    r_m, r_W, r_Z = constraint_residuals(state, embedding)
    val = params.gamma * np.abs(state.Z).sum() + 0.5 * np.sum(state.C**2)
    val += params.lam * np.abs(state.E).sum()
    viol = np.sum(r_Z**2)
    if embedding is not None:
        viol += np.sum(r_W**2) + np.sum(r_m**2)
    return float(val + 0.5 * state.rho * viol)


def _sweep(state, model, embedding, params):
    """One full Z, E, C, u, m sweep plus refresh; returns residual mats."""
    state.Z = update_Z(state, params)
    if embedding is not None:
        state.E = update_E(state, params)
        state.C = update_C(state, params)
    state.u, _ = update_u(state, model, embedding, params)
    if embedding is not None:
        state.m = update_m(state, embedding, params)
    refresh(state, model, embedding)
    return constraint_residuals(state, embedding)


def run_admm(
    model: LinearizedModel,
    embedding: EpipolarEmbedding | None,
    params: AdmmParams,
    u0: np.ndarray,
    run_backend: str | None = None,
) -> AdmmResult:
    """Iterate the five-block ADMM until the three max-norm constraint
    residuals fall below ``params.eps`` or ``params.max_iter`` is hit.

    ``embedding=None`` drops the self-expressiveness constraint entirely
    (the L1-KLT ablation); only the ``Z = A_(u)`` residual then gates
    convergence and the returned C is None.

    Raises :class:`AdmmNonFinite` when an iterate leaves the finite
    range.
    """
    if run_backend is None:
        run_backend = backend.backend_name()
    n = model.n
    use_lowrank = embedding is not None and n >= _LOWRANK_MIN_N
    try:
        if run_backend == "numba":
            if use_lowrank:
                from ._admm_lowrank import run_lowrank_numba

                return _run_fused(model, embedding, params, u0, run_lowrank_numba, lowrank=True)
            from ._admm_core import run_core_numba

            return _run_fused(model, embedding, params, u0, run_core_numba)
        if run_backend == "numpy" and use_lowrank:
            from ._admm_lowrank import run_lowrank_numpy

            return _run_fused(model, embedding, params, u0, run_lowrank_numpy, lowrank=True)
        return _run_reference(model, embedding, params, u0)
    except np.linalg.LinAlgError as exc:
        # LAPACK refuses non-finite input before the residual check sees it.
        empty = np.zeros(0)
        diag = AdmmDiagnostics(
            residual_m=empty,
            residual_W=empty,
            residual_Z=empty,
            objective=empty,
            rho=empty,
            converged=False,
            n_iter=0,
            aborted=True,
        )
        raise AdmmNonFinite(f"non-finite value in ADMM solve ({exc})", diag) from exc


def _run_reference(model, embedding, params, u0):
    state = AdmmState.initialize(model, embedding, params, u0)
    use_reg = embedding is not None
    hist = np.zeros((params.max_iter, 5))
    n_iter = 0
    converged = False
    aborted = False
    for it in range(params.max_iter):
        r_m, r_W, r_Z = _sweep(state, model, embedding, params)
        rz = float(np.abs(r_Z).max()) if r_Z.size else 0.0
        rw = float(np.abs(r_W).max()) if use_reg and r_W.size else 0.0
        rm = float(np.abs(r_m).max()) if use_reg and r_m.size else 0.0
        obj = merit_value(state, embedding, params)
        n_iter = it + 1
        hist[it] = (rm, rw, rz, obj, state.rho)
        if not np.isfinite(obj) or not np.isfinite(rz + rw + rm):
            aborted = True
            break
        update_multipliers(state, embedding, params)
        if rz <= params.eps and (not use_reg or (rw <= params.eps and rm <= params.eps)):
            converged = True
            break
    return _package(state, embedding, hist, n_iter, converged, aborted)


def _run_fused(model, embedding, params, u0, core, lowrank=False):
    n, p = model.tau.shape
    use_reg = embedding is not None
    if use_reg:
        blocks = np.ascontiguousarray(embedding.blocks)
        B = np.ascontiguousarray(embedding.B)
    else:
        blocks = np.zeros((n, 9, 2))
        B = np.zeros((9, n))
    u0 = np.asarray(u0, dtype=np.float64).reshape(n, 2).copy()
    args = (
        np.ascontiguousarray(model.grad),
        np.ascontiguousarray(model.tau),
        blocks,
        B,
        u0,
        params.gamma,
        params.lam,
        params.rho0,
        params.rho_max,
        params.eta,
        params.eps,
        params.max_iter,
    )
    if lowrank:
        out = core(*args, _REG_EPS)
    else:
        out = core(*args, use_reg, _REG_EPS)
    u, C, Z, E, M, Y1, Y2, Ym, rho, n_iter, conv, abrt, hist = out
    state = AdmmState(
        Z=Z,
        E=E,
        C=C,
        u=u.ravel(),
        m=vec(M),
        Y1=Y1,
        Y2=Y2,
        y=vec(Ym),
        rho=rho,
        A=residual_map(model, u.ravel()),
        W=B + M,
    )
    return _package(state, embedding, hist, n_iter, bool(conv), bool(abrt))


def _package(state, embedding, hist, n_iter, converged, aborted):
    diag = AdmmDiagnostics(
        residual_m=hist[:n_iter, 0].copy(),
        residual_W=hist[:n_iter, 1].copy(),
        residual_Z=hist[:n_iter, 2].copy(),
        objective=hist[:n_iter, 3].copy(),
        rho=hist[:n_iter, 4].copy(),
        converged=converged,
        n_iter=n_iter,
        aborted=aborted,
    )
    if aborted:
        raise AdmmNonFinite(
            f"non-finite ADMM iterate at iteration {n_iter}", diagnostics=diag
        )
    C = state.C if embedding is not None else None
    return AdmmResult(u=state.u.copy(), C=C, diagnostics=diag, state=state)
