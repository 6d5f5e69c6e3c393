"""Fused numba implementation of the ADMM sweep loop.

Mirrors ``admm._run_reference`` op-for-op; the test suite asserts the
two paths agree on full trajectories. Kept separate so the reference
path stays importable without numba.
"""

from __future__ import annotations

import numpy as np

from .backend import njit


@njit(cache=True)
def _soft(X, t):
    out = np.empty_like(X)
    for idx in range(X.size):
        v = X.flat[idx]
        a = abs(v) - t
        out.flat[idx] = (a if a > 0.0 else 0.0) * (1.0 if v > 0.0 else -1.0)
    return out


@njit(cache=True)
def _residual_A(grad, u, tau):
    n, p = tau.shape
    A = np.empty((n, p))
    for i in range(n):
        ux = u[i, 0]
        uy = u[i, 1]
        for j in range(p):
            A[i, j] = grad[i, j, 0] * ux + grad[i, j, 1] * uy - tau[i, j]
    return A


@njit(cache=True)
def _apply_P(blocks, u):
    n = u.shape[0]
    out = np.zeros((9, n))
    for i in range(n):
        for r in range(9):
            out[r, i] = blocks[i, r, 0] * u[i, 0] + blocks[i, r, 1] * u[i, 1]
    return out


@njit(cache=True)
def _apply_Pt(blocks, V):
    n = V.shape[1]
    out = np.zeros((n, 2))
    for i in range(n):
        sx = 0.0
        sy = 0.0
        for r in range(9):
            sx += blocks[i, r, 0] * V[r, i]
            sy += blocks[i, r, 1] * V[r, i]
        out[i, 0] = sx
        out[i, 1] = sy
    return out


@njit(cache=True)
def _maxabs(X):
    m = 0.0
    for idx in range(X.size):
        a = abs(X.flat[idx])
        if a > m:
            m = a
    return m


@njit(cache=True)
def _sumabs(X):
    s = 0.0
    for idx in range(X.size):
        s += abs(X.flat[idx])
    return s


@njit(cache=True)
def _sumsq(X):
    s = 0.0
    for idx in range(X.size):
        v = X.flat[idx]
        s += v * v
    return s


@njit(cache=True)
def run_core_numba(
    grad,
    tau,
    blocks,
    B,
    u0,
    gamma,
    lam,
    rho0,
    rho_max,
    eta,
    eps,
    max_iter,
    use_reg,
    reg_eps,
):
    n, p = tau.shape
    eye = np.eye(n)

    # Constant per solve: normal blocks, lifting Gram blocks, Tikhonov floor.
    H = np.zeros((n, 2, 2))
    for i in range(n):
        h00 = 0.0
        h01 = 0.0
        h11 = 0.0
        for j in range(p):
            gx = grad[i, j, 0]
            gy = grad[i, j, 1]
            h00 += gx * gx
            h01 += gx * gy
            h11 += gy * gy
        H[i, 0, 0] = h00
        H[i, 0, 1] = h01
        H[i, 1, 0] = h01
        H[i, 1, 1] = h11
    PtP = np.zeros((n, 2, 2))
    if use_reg:
        for i in range(n):
            for a in range(2):
                for b in range(2):
                    s = 0.0
                    for r in range(9):
                        s += blocks[i, r, a] * blocks[i, r, b]
                    PtP[i, a, b] = s
    trace = 0.0
    for i in range(n):
        trace += H[i, 0, 0] + H[i, 1, 1]
        if use_reg:
            trace += PtP[i, 0, 0] + PtP[i, 1, 1]
    delta = reg_eps * trace / (2 * n)

    u = u0.copy()
    A = _residual_A(grad, u, tau)
    if use_reg:
        M = _apply_P(blocks, u)
    else:
        M = np.zeros((9, n))
    W = B + M
    Z = np.zeros((n, p))
    E = np.zeros((9, n))
    C = np.zeros((n, n))
    Y1 = np.zeros((9, n))
    Y2 = np.zeros((n, p))
    Ym = np.zeros((9, n))
    rho = rho0
    hist = np.zeros((max_iter, 5))
    n_iter = 0
    converged = 0
    aborted = 0

    for it in range(max_iter):
        Z = _soft(A - Y2 / rho, gamma / rho)
        if use_reg:
            WC = np.dot(W, C)
            E = _soft(W - WC + Y1 / rho, lam / rho)
            WtW = np.dot(W.T, np.ascontiguousarray(W))
            rhs_c = rho * np.dot(W.T, np.ascontiguousarray(W - E + Y1 / rho))
            C = np.ascontiguousarray(np.linalg.solve(eye + rho * WtW, rhs_c))

        # u-solve: (P^T P + H + delta I) u_i = g_i/rho + (P^T (y/rho + m))_i
        if use_reg:
            V = Ym / rho + M
            pt = _apply_Pt(blocks, V)
        else:
            pt = np.zeros((n, 2))
        for i in range(n):
            rx = pt[i, 0]
            ry = pt[i, 1]
            for j in range(p):
                coeff = Y2[i, j] / rho + tau[i, j] + Z[i, j]
                rx += coeff * grad[i, j, 0]
                ry += coeff * grad[i, j, 1]
            a = H[i, 0, 0] + PtP[i, 0, 0] + delta
            b = H[i, 0, 1] + PtP[i, 0, 1]
            c = H[i, 1, 1] + PtP[i, 1, 1] + delta
            det = a * c - b * b
            if np.isfinite(det) and det > 0.0:
                u[i, 0] = (c * rx - b * ry) / det
                u[i, 1] = (a * ry - b * rx) / det
            # singular even after regularization: keep previous displacement

        if use_reg:
            IC = eye - C
            Q = np.dot(IC, np.ascontiguousarray(IC.T))
            PU = _apply_P(blocks, u)
            G = Ym / rho - PU
            Tm = np.dot(Y1 / rho - E, np.ascontiguousarray(IC.T))
            rhs_m = -(G + np.dot(B, Q) + Tm)
            M = np.linalg.solve(Q + eye, np.ascontiguousarray(rhs_m.T)).T
            W = B + M
        else:
            PU = M  # both zero in the data-only mode

        A = _residual_A(grad, u, tau)
        rZ_mat = Z - A
        rz = _maxabs(rZ_mat)
        obj = gamma * _sumabs(Z) + 0.5 * _sumsq(C) + lam * _sumabs(E)
        viol = _sumsq(rZ_mat)
        rw = 0.0
        rm = 0.0
        if use_reg:
            rW_mat = W - np.dot(W, C) - E
            rm_mat = M - PU
            rw = _maxabs(rW_mat)
            rm = _maxabs(rm_mat)
            viol += _sumsq(rW_mat) + _sumsq(rm_mat)
        obj += 0.5 * rho * viol

        n_iter = it + 1
        hist[it, 0] = rm
        hist[it, 1] = rw
        hist[it, 2] = rz
        hist[it, 3] = obj
        hist[it, 4] = rho
        if not (np.isfinite(obj) and np.isfinite(rz + rw + rm)):
            aborted = 1
            break

        Y2 = Y2 + rho * rZ_mat
        if use_reg:
            Y1 = Y1 + rho * rW_mat
            Ym = Ym + rho * rm_mat
        rho = min(eta * rho, rho_max)
        if rz <= eps and (not use_reg or (rw <= eps and rm <= eps)):
            converged = 1
            break

    return u, C, Z, E, M, Y1, Y2, Ym, rho, n_iter, converged, aborted, hist
