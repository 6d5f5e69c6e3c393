import numpy as np
import pytest

from mbtrack import backend
from mbtrack.admm import (
    AdmmNonFinite,
    AdmmParams,
    AdmmState,
    constraint_residuals,
    merit_value,
    refresh,
    run_admm,
    soft_threshold,
    solve_m_parts,
    update_C,
    update_E,
    update_m,
    update_multipliers,
    update_u,
    update_Z,
    _sweep,
)
from mbtrack.epipolar import EpipolarEmbedding, reshape_m, vec
from mbtrack.imaging import GrayImage
from mbtrack.linearize import FeatureSet, LinearizedModel, linearize, residual_map
from mbtrack.synthlab import (
    augmented_lagrangian,
    oracle_minimize_block,
    random_admm_instance,
)


def test_params_validation():
    with pytest.raises(ValueError):
        AdmmParams(gamma=-1)
    with pytest.raises(ValueError):
        AdmmParams(eta=1.0)
    with pytest.raises(ValueError):
        AdmmParams(rho0=2.0, rho_max=1.0)


def test_soft_threshold_examples():
    assert soft_threshold(1.2, 0.5) == pytest.approx(0.7)
    assert soft_threshold(-1.2, 0.5) == pytest.approx(-0.7)
    np.testing.assert_allclose(soft_threshold(np.array([0.3, -0.4]), 0.5), 0.0)


def test_update_Z_formula(rng):
    model, emb, params, state = random_admm_instance(rng)
    Z = update_Z(state, params)
    expect = soft_threshold(state.A - state.Y2 / state.rho, params.gamma / state.rho)
    np.testing.assert_allclose(Z, expect)
    # everything below threshold -> 0
    state.Y2 = state.rho * state.A.copy()  # argument becomes 0
    np.testing.assert_allclose(update_Z(state, params), 0.0)


def test_update_E_identity_coefficients(rng):
    model, emb, params, state = random_admm_instance(rng)
    state.C = np.eye(state.C.shape[0])
    E = update_E(state, params)
    expect = soft_threshold(state.Y1 / state.rho, params.lam / state.rho)
    np.testing.assert_allclose(E, expect)
    # huge lam -> E = 0
    big = AdmmParams(gamma=params.gamma, lam=1e12)
    np.testing.assert_allclose(update_E(state, big), 0.0)


def test_update_C_zero_W(rng):
    model, emb, params, state = random_admm_instance(rng)
    state.W = np.zeros_like(state.W)
    np.testing.assert_allclose(update_C(state, params), 0.0)


def test_update_C_normal_equation_residual(rng):
    model, emb, params, state = random_admm_instance(rng)
    C = update_C(state, params)
    W = state.W
    n = W.shape[1]
    lhs = (np.eye(n) + state.rho * W.T @ W) @ C
    rhs = state.rho * W.T @ (W - state.E + state.Y1 / state.rho)
    assert np.abs(lhs - rhs).max() <= 1e-10 * max(np.abs(rhs).max(), 1.0)


def test_update_C_large_rho_stationarity(rng):
    # E = Y1 = 0, rho large: returned C is the stationary point of
    # 1/2||C||^2 + rho/2 ||WC - W||^2.
    model, emb, params, state = random_admm_instance(rng)
    state.E = np.zeros_like(state.E)
    state.Y1 = np.zeros_like(state.Y1)
    state.rho = 1e8
    C = update_C(state, params)
    W = state.W
    grad = C + state.rho * W.T @ (W @ C - W)
    assert np.abs(grad).max() <= 1e-6 * state.rho


def test_update_C_matches_lstsq(rng):
    W = rng.normal(size=(9, 6))
    model, emb, params, state = random_admm_instance(rng, n=6)
    state.W = W
    C = update_C(state, params)
    n = 6
    lhs = np.eye(n) + state.rho * W.T @ W
    rhs = state.rho * W.T @ (W - state.E + state.Y1 / state.rho)
    ref = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    np.testing.assert_allclose(C, ref, atol=1e-9)


def test_update_u_zero_rhs(rng):
    model, emb, params, state = random_admm_instance(rng)
    state.Y2 = np.zeros_like(state.Y2)
    state.Z = -model.tau.copy()  # makes g = 0
    state.y = np.zeros_like(state.y)
    state.m = np.zeros_like(state.m)
    u, bad = update_u(state, model, emb, params)
    np.testing.assert_allclose(u, 0.0, atol=1e-12)
    assert not bad.any()


def test_update_u_single_feature_closed_form(rng):
    model, emb, params, state = random_admm_instance(rng, n=1)
    u, _ = update_u(state, model, emb, params)
    # hand-build the 2x2 system from the definitions
    H = np.einsum("npk,npl->nkl", model.grad, model.grad)[0]
    PtP = emb.PtP()[0]
    g = np.einsum(
        "np,npk->nk", state.Y2 / state.rho + model.tau + state.Z, model.grad
    )[0]
    rhs = g + emb.apply_Pt(reshape_m(state.y) / state.rho + reshape_m(state.m)).reshape(1, 2)[0]
    lhs = H + PtP
    expect = np.linalg.solve(lhs, rhs)
    np.testing.assert_allclose(u, expect, rtol=1e-9, atol=1e-12)


def test_update_m_identity_C(rng):
    # C = I makes Q = 0: M = -(G + T).
    model, emb, params, state = random_admm_instance(rng)
    state.C = np.eye(state.C.shape[0])
    m = update_m(state, emb, params)
    G = reshape_m(state.y) / state.rho - emb.apply_P(state.u)
    T = (state.Y1 / state.rho - state.E) @ (np.eye(state.C.shape[0]) - state.C.T)
    np.testing.assert_allclose(reshape_m(m), -(G + T), atol=1e-12)


def test_update_m_symbolic_G_equals_B(rng):
    # With Y1 = E = 0 (T = 0) and G = B: M = -B(I + Q)(Q + I)^-1 = -B,
    # so W = B + M = 0.
    model, emb, params, state = random_admm_instance(rng)
    n = state.C.shape[0]
    B = emb.B
    C = rng.normal(0, 0.3, (n, n))
    M = solve_m_parts(G=B.copy(), B=B, C=C, E=np.zeros((9, n)), Y1=np.zeros((9, n)), rho=state.rho)
    np.testing.assert_allclose(M, -B, atol=1e-9)
    np.testing.assert_allclose(B + M, 0.0, atol=1e-9)


def test_update_multipliers_arithmetic(rng):
    model, emb, params, state = random_admm_instance(rng)
    refresh(state, model, emb)
    r_m, r_W, r_Z = constraint_residuals(state, emb)
    Y1, Y2, y, rho = state.Y1.copy(), state.Y2.copy(), state.y.copy(), state.rho
    update_multipliers(state, emb, params)
    np.testing.assert_allclose(state.Y1, Y1 + rho * r_W)
    np.testing.assert_allclose(state.Y2, Y2 + rho * r_Z)
    np.testing.assert_allclose(state.y, y + rho * vec(r_m))
    assert state.rho == min(params.eta * rho, params.rho_max)


def test_multipliers_unchanged_when_feasible(rng):
    model, emb, params, state = random_admm_instance(rng)
    # Make the state exactly feasible.
    state.u = rng.normal(size=2 * model.n)
    refresh(state, model, emb)
    state.Z = state.A.copy()
    state.m = vec(emb.apply_P(state.u))
    refresh(state, model, emb)
    state.E = state.W - state.W @ state.C
    Y1, Y2, y = state.Y1.copy(), state.Y2.copy(), state.y.copy()
    rho = state.rho
    update_multipliers(state, emb, params)
    np.testing.assert_allclose(state.Y1, Y1, atol=1e-12)
    np.testing.assert_allclose(state.Y2, Y2, atol=1e-12)
    np.testing.assert_allclose(state.y, y, atol=1e-12)
    assert state.rho == pytest.approx(params.eta * rho)


def test_rho_capped():
    params = AdmmParams(rho0=5.0, rho_max=5.5, eta=2.0)
    model, emb, params2, state = random_admm_instance(np.random.default_rng(0))
    state.rho = 5.0
    refresh(state, model, emb)
    update_multipliers(state, emb, params)
    assert state.rho == 5.5
    update_multipliers(state, emb, params)
    assert state.rho == 5.5


def _analytic_fixed_point(rng, n=5):
    """Zero-data instance with an exact fixed point of all five updates."""
    p = 9
    model = LinearizedModel(
        grad=np.zeros((n, p, 2)),
        tau=np.zeros((n, p)),
        u0=np.zeros((n, 2)),
        mask=np.ones((n, p), bool),
        lost=np.zeros(n, bool),
    )
    pts = rng.uniform(-1.5, 1.5, (n, 2))
    emb = EpipolarEmbedding.from_points(pts)
    B = emb.B
    C_star = np.linalg.pinv(B) @ B
    Y1_star = np.linalg.pinv(B.T) @ C_star
    params = AdmmParams(gamma=1.0, lam=100.0)
    state = AdmmState.initialize(model, emb, params, np.zeros(2 * n))
    state.C = C_star
    state.Y1 = Y1_star
    state.rho = 1.7
    refresh(state, model, emb)
    return model, emb, params, state


def test_fixed_point_sweep_invariant(rng):
    model, emb, params, state = _analytic_fixed_point(rng)
    before = {
        "Z": state.Z.copy(),
        "E": state.E.copy(),
        "C": state.C.copy(),
        "u": state.u.copy(),
        "m": state.m.copy(),
    }
    _sweep(state, model, emb, params)
    np.testing.assert_allclose(state.Z, before["Z"], atol=1e-10)
    np.testing.assert_allclose(state.E, before["E"], atol=1e-10)
    np.testing.assert_allclose(state.C, before["C"], atol=1e-10)
    np.testing.assert_allclose(state.u, before["u"], atol=1e-10)
    np.testing.assert_allclose(state.m, before["m"], atol=1e-10)


def test_each_update_zeroes_its_lagrangian_block(rng):
    # Closed-form updates minimize L_rho over their own block: compare
    # against the generic block oracles.
    for trial in range(3):
        model, emb, params, state = random_admm_instance(rng)
        for block, closed in (
            ("Z", lambda: update_Z(state, params)),
            ("E", lambda: update_E(state, params)),
            ("C", lambda: update_C(state, params)),
        ):
            oracle = oracle_minimize_block(model, emb, params, state, block)
            np.testing.assert_allclose(closed(), oracle, atol=1e-8)
        u, _ = update_u(state, model, emb, params)
        np.testing.assert_allclose(
            u, oracle_minimize_block(model, emb, params, state, "u"), atol=1e-8
        )
        m = update_m(state, emb, params)
        np.testing.assert_allclose(
            m, oracle_minimize_block(model, emb, params, state, "m"), atol=1e-8
        )


def _fd_grad(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def test_u_and_m_updates_are_stationary(rng):
    model, emb, params, state = random_admm_instance(rng)

    def lag_u(uvec):
        s2 = AdmmState(**{**state.__dict__})
        s2.u = uvec
        return augmented_lagrangian(model, emb, params, s2)

    def lag_m(mvec):
        s2 = AdmmState(**{**state.__dict__})
        s2.m = mvec
        return augmented_lagrangian(model, emb, params, s2)

    u, _ = update_u(state, model, emb, params)
    g_at_start = np.linalg.norm(_fd_grad(lag_u, state.u))
    g_at_sol = np.linalg.norm(_fd_grad(lag_u, u))
    assert g_at_sol <= 1e-5 * max(g_at_start, 1.0)

    m = update_m(state, emb, params)
    gm_start = np.linalg.norm(_fd_grad(lag_m, state.m))
    gm_sol = np.linalg.norm(_fd_grad(lag_m, m))
    assert gm_sol <= 1e-5 * max(gm_start, 1.0)


def _shifted_ramp_pair(shift=(1.0, 0.0)):
    w = h = 48
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    base = (xx + 0.6 * yy) / 150.0 + 0.1
    T = GrayImage(base)
    I = GrayImage(base - (shift[0] + 0.6 * shift[1]) / 150.0)  # content moved by +shift
    return T, I


def test_run_admm_recovers_shift_on_linear_image():
    # lam huge disables the outlier term; the linear image makes the
    # Taylor model exact, so the data optimum is u . grad = known.
    T, I = _shifted_ramp_pair((2.0, 0.0))
    fs = FeatureSet(np.array([[24.0, 24.0]]), half=3)
    model = linearize(I, T, fs, np.zeros((1, 2)))
    res = run_admm(model, None, AdmmParams(lam=1e12), np.zeros(2))
    # projection on the gradient direction recovers the shift component
    g = np.array([1.0, 0.6]) / 150.0
    proj = res.u @ g / np.linalg.norm(g)
    expect = np.array([2.0, 0.0]) @ g / np.linalg.norm(g)
    assert abs(proj - expect) < 1e-4
    A = residual_map(model, res.u)
    assert np.abs(A).max() < 1e-4


def test_run_admm_converges_and_reports(rng):
    model, emb, params, state = random_admm_instance(rng)
    params = AdmmParams(gamma=params.gamma, lam=params.lam, max_iter=300)
    res = run_admm(model, emb, params, np.zeros(2 * model.n))
    d = res.diagnostics
    assert d.converged
    assert d.residual_Z[-1] <= params.eps
    assert d.residual_W[-1] <= params.eps
    assert d.residual_m[-1] <= params.eps
    assert np.all(np.diff(d.rho) >= 0)
    assert d.rho[-1] <= params.rho_max


def test_run_admm_without_embedding_matches_regularizer_disabled(rng):
    model, _, params, _ = random_admm_instance(rng, with_embedding=False)
    u0 = rng.normal(0, 0.2, 2 * model.n)
    r1 = run_admm(model, None, params, u0)
    r2 = run_admm(model, None, params, u0.copy())
    np.testing.assert_array_equal(r1.u, r2.u)
    assert r1.C is None


def test_run_admm_nonfinite_aborts(rng):
    model, emb, params, _ = random_admm_instance(rng)
    model.tau[0, 0] = np.nan
    with pytest.raises(AdmmNonFinite) as exc:
        run_admm(model, emb, params, np.zeros(2 * model.n))
    assert exc.value.diagnostics is not None


def test_diagnostics_csv_export(tmp_path, rng):
    model, emb, params, _ = random_admm_instance(rng)
    params = AdmmParams(gamma=params.gamma, lam=params.lam, max_iter=40)
    res = run_admm(model, emb, params, np.zeros(2 * model.n))
    path = tmp_path / "diag.csv"
    res.diagnostics.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iteration,residual_m,residual_W,residual_Z,objective,rho"
    assert len(lines) == res.diagnostics.n_iter + 1


def test_merit_matches_oracle_objective(rng):
    from mbtrack.synthlab import oracle_objective

    model, emb, params, state = random_admm_instance(rng)
    refresh(state, model, emb)
    ours = merit_value(state, emb, params)
    ref = oracle_objective(
        state.u, state.C, state.E, state.Z, state.m, emb, model, params, state.rho
    )
    assert ours == pytest.approx(ref, rel=1e-12)


@pytest.mark.skipif(not backend.HAVE_NUMBA, reason="numba not installed")
def test_backends_agree_full_trajectory(rng):
    model, emb, params, _ = random_admm_instance(rng)
    params = AdmmParams(gamma=params.gamma, lam=params.lam, max_iter=120)
    u0 = rng.normal(0, 0.2, 2 * model.n)
    with backend.force_backend("numpy"):
        r_np = run_admm(model, emb, params, u0)
    with backend.force_backend("numba"):
        r_nb = run_admm(model, emb, params, u0)
    assert r_np.diagnostics.n_iter == r_nb.diagnostics.n_iter
    assert r_np.diagnostics.converged == r_nb.diagnostics.converged
    np.testing.assert_allclose(r_np.u, r_nb.u, atol=1e-8)
    np.testing.assert_allclose(r_np.C, r_nb.C, atol=1e-8)
    np.testing.assert_allclose(
        r_np.diagnostics.objective, r_nb.diagnostics.objective, rtol=1e-6
    )
