"""Low-rank ADMM core for large feature counts.

Every W-side quantity lives in the 9-dimensional lifted space, so the
N x N objects of the dense sweep are low-rank around the identity:

    C       = W_c^T X             (X solves a 9x9 system)
    Q + I   = 2 I + U S U^T       (U = [W_c^T X^T] is N x 18)

which turns the two N x N factorizations and the N^3 product of the
dense sweep into 9x9 / 18x18 solves. Identical math to the dense core;
the equivalence is asserted by tests.

The module-level function compiles under numba and also runs as plain
NumPy (the fallback backend executes the same source uncompiled).
"""

from __future__ import annotations

import numpy as np

from .backend import njit


def _lowrank_core(
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
    reg_eps,
):
    n, p = tau.shape
    eye9 = np.eye(9)
    eye18 = np.eye(18)

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
    for i in range(n):
        for a in range(2):
            for b in range(2):
                s = 0.0
                for r in range(9):
                    s += blocks[i, r, a] * blocks[i, r, b]
                PtP[i, a, b] = s
    trace = 0.0
    for i in range(n):
        trace += H[i, 0, 0] + H[i, 1, 1] + PtP[i, 0, 0] + PtP[i, 1, 1]
    delta = reg_eps * trace / (2 * n)

    u = u0.copy()
    A = np.empty((n, p))
    for i in range(n):
        for j in range(p):
            A[i, j] = grad[i, j, 0] * u[i, 0] + grad[i, j, 1] * u[i, 1] - tau[i, j]
    M = np.zeros((9, n))
    for i in range(n):
        for r in range(9):
            M[r, i] = blocks[i, r, 0] * u[i, 0] + blocks[i, r, 1] * u[i, 1]
    W = B + M
    Z = np.zeros((n, p))
    E = np.zeros((9, n))
    Y1 = np.zeros((9, n))
    Y2 = np.zeros((n, p))
    Ym = np.zeros((9, n))
    # C = W_c^T X; starts at zero.
    X = np.zeros((9, n))
    W_c = W.copy()
    rho = rho0
    hist = np.zeros((max_iter, 5))
    n_iter = 0
    converged = 0
    aborted = 0

    for it in range(max_iter):
        arg = A - Y2 / rho
        Z = np.sign(arg) * np.maximum(np.abs(arg) - gamma / rho, 0.0)

        # E and C updates (W C = (W W_c^T) X throughout)
        WWc = np.dot(W, W_c.T)
        WC = np.dot(WWc, X)
        argE = W - WC + Y1 / rho
        E = np.sign(argE) * np.maximum(np.abs(argE) - lam / rho, 0.0)
        D = rho * (W - E) + Y1
        gram = np.dot(W, W.T)
        X = np.ascontiguousarray(np.linalg.solve(eye9 + rho * gram, D))
        W_c = W.copy()

        # u-solve
        V = Ym / rho + M
        for i in range(n):
            rx = 0.0
            ry = 0.0
            for r in range(9):
                rx += blocks[i, r, 0] * V[r, i]
                ry += blocks[i, r, 1] * V[r, i]
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

        # m-solve via the rank-18 structure of Q + I
        PU = np.empty((9, n))
        for i in range(n):
            for r in range(9):
                PU[r, i] = blocks[i, r, 0] * u[i, 0] + blocks[i, r, 1] * u[i, 1]
        G = Ym / rho - PU
        XXt = np.dot(X, X.T)
        # R = -(G + B Q + T); B Q = B + (B U) S U^T with U = [W_c^T X^T]
        BWct = np.dot(B, W_c.T)  # B U part 1 (9x9)
        BXt = np.dot(B, X.T)  # B U part 2 (9x9)
        # (B U) S = [BWct XXt - BXt | -BWct]
        BUS1 = np.dot(BWct, XXt) - BXt
        BUS2 = -BWct
        BQ = B + np.dot(BUS1, W_c) + np.dot(BUS2, X)
        F = Y1 / rho - E
        T = F - np.dot(np.dot(F, X.T), W_c)
        R = -(G + BQ + T)
        # Solve M (Q + I) = R:   (Q+I)^-1 = I/2 - U K^-1 U^T / 4,
        # K = S^-1 + U^T U / 2,  S^-1 = [[0, -I], [-I, -XXt]].
        UtU = np.empty((18, 18))
        WcWct = np.dot(W_c, W_c.T)
        WcXt = np.dot(W_c, X.T)
        UtU[:9, :9] = WcWct
        UtU[:9, 9:] = WcXt
        UtU[9:, :9] = WcXt.T
        UtU[9:, 9:] = XXt
        K = 0.5 * UtU
        K[:9, 9:] -= eye9
        K[9:, :9] -= eye9
        K[9:, 9:] -= XXt
        RU = np.empty((9, 18))
        RU[:, :9] = np.dot(R, W_c.T)
        RU[:, 9:] = np.dot(R, X.T)
        mid = np.linalg.solve(K, np.ascontiguousarray(RU.T))  # 18 x 9
        midT = np.ascontiguousarray(mid.T)
        M = 0.5 * R - 0.25 * (
            np.dot(np.ascontiguousarray(midT[:, :9]), W_c)
            + np.dot(np.ascontiguousarray(midT[:, 9:]), X)
        )
        W = B + M

        for i in range(n):
            for j in range(p):
                A[i, j] = grad[i, j, 0] * u[i, 0] + grad[i, j, 1] * u[i, 1] - tau[i, j]
        rZ_mat = Z - A
        rz = np.abs(rZ_mat).max()
        WC2 = np.dot(np.dot(W, W_c.T), X)
        rW_mat = W - WC2 - E
        rm_mat = M - PU
        rw = np.abs(rW_mat).max()
        rm = np.abs(rm_mat).max()
        normC2 = np.sum(WcWct * XXt)  # tr(C^T C) with both factors symmetric
        obj = gamma * np.abs(Z).sum() + 0.5 * normC2 + lam * np.abs(E).sum()
        obj += 0.5 * rho * (
            np.sum(rZ_mat**2) + np.sum(rW_mat**2) + np.sum(rm_mat**2)
        )

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
        Y1 = Y1 + rho * rW_mat
        Ym = Ym + rho * rm_mat
        rho = min(eta * rho, rho_max)
        if rz <= eps and rw <= eps and rm <= eps:
            converged = 1
            break

    C = np.dot(np.ascontiguousarray(W_c.T), X)
    return u, C, Z, E, M, Y1, Y2, Ym, rho, n_iter, converged, aborted, hist


run_lowrank_numba = njit(cache=True)(_lowrank_core)
run_lowrank_numpy = _lowrank_core
