import numpy as np
import pytest

from mbtrack.imaging import GrayImage, gradient
from mbtrack.linearize import (
    FeatureSet,
    blocks_to_matrix,
    build_H_g,
    linearize,
    residual_map,
)


def ramp_image(w=40, h=40, ax=1.0, ay=0.0, c=0.1, scale=100.0):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    return GrayImage((ax * xx + ay * yy) / scale + c)


def test_featureset_validation():
    fs = FeatureSet(np.array([[5.0, 6.0], [9.0, 9.0]]), half=2)
    assert fs.n == 2 and fs.patch_size == 5
    assert fs.offsets.shape == (25, 2)
    assert fs.u.shape == (4,)
    with pytest.raises(ValueError):
        FeatureSet(np.zeros((2, 2)), half=1, u=np.zeros(3))
    with pytest.raises(ValueError):
        FeatureSet(np.zeros((2, 3)), half=1)


def test_perfect_alignment_zero_residual(smooth_image):
    fs = FeatureSet(np.array([[20.0, 20.0], [35.5, 30.25]]), half=3)
    model = linearize(smooth_image, smooth_image, fs, np.zeros((2, 2)))
    A = residual_map(model, np.zeros(4))
    np.testing.assert_allclose(A, 0.0, atol=1e-12)
    assert not model.lost.any()
    assert model.mask.all()


def test_linear_ramp_taylor_exact():
    # For a linear image the Taylor model is exact: the residual of the
    # model vanishes at the true shift.
    T = ramp_image(ax=1.0, ay=0.5)
    I = ramp_image(ax=1.0, ay=0.5)
    # image shifted by (1, 0): I(x) = T(x - (1,0)) => content moves +x
    I = GrayImage(np.roll(T.data, 1, axis=1))
    fs = FeatureSet(np.array([[20.0, 20.0]]), half=2)
    model = linearize(I, T, fs, np.zeros((1, 2)))
    A = residual_map(model, np.array([1.0, 0.0]))
    np.testing.assert_allclose(A[0], 0.0, atol=1e-10)


def test_linearize_matches_direct_definition(smooth_image, rng):
    # tau and A recomputed from first principles via bilinear sampling
    from mbtrack.kernels import bilinear_many

    I = smooth_image
    T = GrayImage(np.clip(smooth_image.data**1.3 + 0.01, 0, 1))
    fs = FeatureSet(np.array([[30.0, 25.0], [22.25, 40.5]]), half=2)
    u0 = rng.normal(0, 1, (2, 2))
    model = linearize(I, T, fs, u0)
    gf = gradient(I)
    offs = fs.offsets
    for i in range(2):
        pos_t = fs.centers[i] + offs
        pos_i = pos_t + u0[i]
        tvals, _ = bilinear_many(T.data, pos_t[:, 0], pos_t[:, 1])
        ivals, _ = bilinear_many(I.data, pos_i[:, 0], pos_i[:, 1])
        gx, _ = bilinear_many(gf[..., 0], pos_i[:, 0], pos_i[:, 1])
        gy, _ = bilinear_many(gf[..., 1], pos_i[:, 0], pos_i[:, 1])
        tau_ref = gx * u0[i, 0] + gy * u0[i, 1] + tvals - ivals
        np.testing.assert_allclose(model.tau[i], tau_ref, atol=1e-13)
        u = rng.normal(0, 1, 2)
        A_ref = gx * u[0] + gy * u[1] - tau_ref
        ui = np.zeros(4)
        ui[2 * i : 2 * i + 2] = u
        np.testing.assert_allclose(residual_map(model, ui)[i], A_ref, atol=1e-13)


def test_residual_map_hand_case():
    n, p = 1, 9
    model_grad = np.tile(np.array([1.0, 0.0]), (n, p, 1))
    tau = np.full((n, p), 2.0)
    from mbtrack.linearize import LinearizedModel

    model = LinearizedModel(
        grad=model_grad,
        tau=tau,
        u0=np.zeros((1, 2)),
        mask=np.ones((n, p), bool),
        lost=np.zeros(n, bool),
    )
    A = residual_map(model, np.array([5.0, 3.0]))
    np.testing.assert_allclose(A, 3.0)


def test_residual_affine_in_u(smooth_image, rng):
    fs = FeatureSet(np.array([[30.0, 25.0], [22.0, 40.0], [12.5, 12.5]]), half=3)
    model = linearize(smooth_image, smooth_image, fs, rng.normal(0, 1, (3, 2)))
    u1 = rng.normal(size=6)
    u2 = rng.normal(size=6)
    a = 0.37
    lhs = residual_map(model, a * u1 + (1 - a) * u2)
    rhs = a * residual_map(model, u1) + (1 - a) * residual_map(model, u2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_out_of_bounds_masked_and_lost(smooth_image):
    fs = FeatureSet(np.array([[1.0, 1.0], [-50.0, -50.0], [30.0, 30.0]]), half=2)
    model = linearize(smooth_image, smooth_image, fs, np.zeros((3, 2)))
    assert model.lost.tolist() == [False, True, False]
    assert not model.mask[0].all()  # corner patch partially clipped
    np.testing.assert_allclose(model.grad[1], 0.0)
    np.testing.assert_allclose(model.tau[1], 0.0)
    # masked pixels contribute zero residual
    A = residual_map(model, np.ones(6))
    np.testing.assert_allclose(A[1], 0.0)


def test_build_H_g_examples():
    from mbtrack.linearize import LinearizedModel

    grad = np.tile(np.array([1.0, 0.0]), (1, 9, 1))
    model = LinearizedModel(
        grad=grad,
        tau=np.zeros((1, 9)),
        u0=np.zeros((1, 2)),
        mask=np.ones((1, 9), bool),
        lost=np.zeros(1, bool),
    )
    H, _ = build_H_g(model)
    np.testing.assert_allclose(H[0], [[9.0, 0.0], [0.0, 0.0]])

    grad2 = np.tile(np.array([1.0, 1.0]), (1, 4, 1))
    model2 = LinearizedModel(
        grad=grad2,
        tau=np.ones((1, 4)),
        u0=np.zeros((1, 2)),
        mask=np.ones((1, 4), bool),
        lost=np.zeros(1, bool),
    )
    _, g = build_H_g(model2, Y2=0.0, Z=0.0, rho=1.0)
    np.testing.assert_allclose(g[0], [4.0, 4.0])


def test_H_blocks_psd(smooth_image, rng):
    fs = FeatureSet(rng.uniform(10, 50, (6, 2)), half=3)
    model = linearize(smooth_image, smooth_image, fs, np.zeros((6, 2)))
    H, _ = build_H_g(model)
    for Hi in H:
        np.testing.assert_allclose(Hi, Hi.T, atol=1e-15)
        evals = np.linalg.eigvalsh(Hi)
        assert evals.min() >= -1e-12
    dense = blocks_to_matrix(H)
    assert dense.shape == (12, 12)
    np.testing.assert_allclose(dense[:2, :2], H[0])
    assert np.count_nonzero(dense[:2, 2:]) == 0


def test_g_is_lagrangian_gradient(rng):
    # g equals -d/du of the smooth data part of the Lagrangian at u=0:
    # smooth part S(u) = <Y2, -A(u)> + rho/2 ||Z - A(u)||^2, so
    # -dS/du|_0 = sum_j (Y2 + rho (Z + tau)) grad = g.
    from mbtrack.synthlab import random_admm_instance

    model, _, params, state = random_admm_instance(rng, n=4, with_embedding=False)
    Y2 = state.Y2
    Z = state.Z
    rho = state.rho
    _, g = build_H_g(model, Y2, Z, rho)

    def smooth_part(uvec):
        A = residual_map(model, uvec)
        return float(np.sum(Y2 * (Z - A)) + 0.5 * rho * np.sum((Z - A) ** 2))

    h = 1e-6
    fd = np.zeros(8)
    for k in range(8):
        e = np.zeros(8)
        e[k] = h
        fd[k] = (smooth_part(e) - smooth_part(-e)) / (2 * h)
    np.testing.assert_allclose(-fd, g.ravel(), rtol=1e-5, atol=1e-7)
