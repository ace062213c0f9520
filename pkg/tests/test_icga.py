import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from efree.geometry import CameraView, intrinsics, look_at
from efree.icga import (
    DepthFeatureUNet, Refiner, SimilarityPair, depth_from_logits, icga_run, initial_depths,
    normalized_disparity, predict_only, refine, similarity, unet_predict, update_gate,
)
from efree.tensorcore import ShapeError, Tensor, precision

NEAR, FAR = 0.5, 6.0


def cams(size=16, baseline=0.3):
    K = intrinsics(size, size, size / 2, size / 2)
    c1 = CameraView(K, np.eye(4), size, size, NEAR, FAR)
    c2 = CameraView(K, look_at([baseline, 0.0, 0.0], [0.0, 0.0, 3.0]), size, size, NEAR, FAR)
    return c1, c2


def randomize(module, rng, scale=0.1):
    for p in module.parameters():
        p.data[...] = rng.normal(scale=scale, size=p.shape)
    return module


# -------------------------------------------------------------- depth maps

@given(arrays(np.float64, 10, elements=st.floats(-30, 30)))
def test_depth_logits_in_bounds(x):
    d = depth_from_logits(Tensor(x), NEAR, FAR).data
    assert (d > NEAR).all() and (d < FAR).all()


def test_disparity_round_trip():
    with precision(np.float64):
        x = Tensor(np.linspace(-4, 4, 9))  # well inside the saturation clamp
        s = normalized_disparity(depth_from_logits(x, NEAR, FAR), NEAR, FAR).data
    np.testing.assert_allclose(s, 1 / (1 + np.exp(-x.data)), atol=1e-12)


def test_initial_depth_is_mid_disparity():
    d = initial_depths((2, 3), NEAR, FAR, np.float64)[0].data
    np.testing.assert_allclose(normalized_disparity(d, NEAR, FAR).data, 0.5)


# ----------------------------------------------------------------- U-Net

@pytest.fixture(scope="module")
def unet():
    return DepthFeatureUNet(np.random.default_rng(0), channels=8, ladder=(8, 8, 16))


def test_unet_depth_strictly_inside_bounds(unet, rng):
    f1, f2 = rng.normal(size=(2, 8, 16, 16)) * 3
    randomize(unet.net, np.random.default_rng(1), 0.5)
    d1, g1, d2, g2 = unet_predict(Tensor(f1), Tensor(f2), unet, NEAR, FAR)
    for d in (d1, d2):
        assert (d.data > NEAR).all() and (d.data < FAR).all()
    assert g1.shape == (8, 16, 16)


def test_unet_swap_symmetry(rng):
    with precision(np.float64):
        net = randomize(DepthFeatureUNet(rng, channels=4, ladder=(4, 8)), rng)
        f1, f2 = Tensor(rng.normal(size=(4, 8, 8))), Tensor(rng.normal(size=(4, 8, 8)))
        a = unet_predict(f1, f2, net, NEAR, FAR)
        b = unet_predict(f2, f1, net, NEAR, FAR)
    # joint attention sums over both views' tokens in swapped order, so allow rounding
    for x, y in zip(a, (b[2], b[3], b[0], b[1])):
        np.testing.assert_allclose(x.data, y.data, rtol=0, atol=1e-12)


def test_unet_gradient_finite_nonzero(rng):
    net = DepthFeatureUNet(rng, channels=4, ladder=(4, 8))
    d1, _, _, _ = unet_predict(Tensor(rng.normal(size=(4, 8, 8))), Tensor(rng.normal(size=(4, 8, 8))),
                               net, NEAR, FAR)
    d1.mean().backward()
    norms = [np.linalg.norm(p.grad) for p in net.parameters() if p.grad is not None]
    assert all(np.isfinite(norms)) and sum(norms) > 0


def test_unet_shape_mismatch(unet):
    with pytest.raises(ShapeError):
        unet_predict(Tensor(np.zeros((8, 16, 16))), Tensor(np.zeros((8, 8, 8))), unet, NEAR, FAR)


# ------------------------------------------------------------- similarity

def test_similarity_examples():
    s = similarity(Tensor(np.ones((4, 2, 2))), Tensor(np.ones((4, 2, 2))))
    np.testing.assert_array_equal(s.s1.data, 0.0)
    np.testing.assert_allclose(s.s2.data, 2.0)
    e1, e2 = np.zeros((3, 1, 1)), np.zeros((3, 1, 1))
    e1[0], e2[1] = 1.0, 1.0
    s = similarity(Tensor(e1), Tensor(e2))
    assert s.s2.data.item() == 0.0
    assert sorted(s.s1.data.ravel().tolist()) == [0.0, 1.0, 1.0]
    assert s.s2.shape == (1, 1, 1)


@given(st.integers(0, 10_000))
def test_similarity_properties(seed):
    rng = np.random.default_rng(seed)
    a, b = Tensor(rng.normal(size=(5, 3, 4))), Tensor(rng.normal(size=(5, 3, 4)))
    ab, ba = similarity(a, b), similarity(b, a)
    assert (ab.s1.data >= 0).all()
    np.testing.assert_array_equal(ab.s2.data, ba.s2.data)
    assert np.isfinite(ab.s2.data).all()


def test_similarity_shape_check():
    with pytest.raises(ShapeError):
        similarity(Tensor(np.ones((2, 3, 3))), Tensor(np.ones((3, 3, 3))))


# ----------------------------------------------------------------- refine

def test_gate():
    s2 = Tensor(np.array([[[-8.0, 0.0, 8.0]]]), dtype=np.float64)
    np.testing.assert_allclose(update_gate(s2, 4.0).data, np.tanh([[[-2.0, 0.0, 2.0]]]))
    assert update_gate(s2, None) is s2


def test_refine_fixed_point_when_s2_zero(rng):
    phi = randomize(Refiner(rng, 4), rng)
    g, d = Tensor(rng.normal(size=(4, 5, 5))), Tensor(rng.uniform(1, 3, (5, 5)))
    sim = SimilarityPair(Tensor(rng.uniform(size=(4, 5, 5))), Tensor(np.zeros((1, 5, 5))))
    for tau in (4.0, None):
        g2, d2 = refine(g, d, sim, phi, NEAR, FAR, tau)
        np.testing.assert_array_equal(d2.data, d.data)
        np.testing.assert_array_equal(g2.data, g.data)


def test_refine_zero_init_keeps_features(rng):
    phi = Refiner(rng, 4)
    g, d = Tensor(rng.normal(size=(4, 5, 5))), Tensor(rng.uniform(1, 3, (5, 5)))
    sim = similarity(g, Tensor(rng.normal(size=(4, 5, 5))))
    g2, d2 = refine(g, d, sim, phi, NEAR, FAR)
    np.testing.assert_array_equal(g2.data, g.data)
    assert not np.array_equal(d2.data, d.data)


@given(st.integers(0, 10_000), st.sampled_from([4.0, None]))
def test_refine_depths_stay_in_bounds(seed, tau):
    rng = np.random.default_rng(seed)
    phi = Refiner(rng, 3)
    g = Tensor(rng.normal(scale=5, size=(3, 4, 4)))
    d = Tensor(rng.uniform(NEAR, FAR, (4, 4)))
    _, d2 = refine(g, d, similarity(g, Tensor(rng.normal(scale=5, size=(3, 4, 4)))), phi, NEAR, FAR, tau)
    assert (d2.data >= NEAR).all() and (d2.data <= FAR).all()


def test_refiner_channel_check(rng):
    with pytest.raises(ShapeError):
        Refiner(rng, 4)(Tensor(np.zeros((6, 4, 4))))


def test_refine_depth_update_formula(rng):
    with precision(np.float64):
        phi = Refiner(rng, 2)
        g = Tensor(rng.normal(size=(2, 3, 3)))
        d = Tensor(np.full((3, 3), 2.0))
        s2 = rng.normal(scale=0.5, size=(1, 3, 3))
        _, d2 = refine(g, d, SimilarityPair(Tensor(np.zeros((2, 3, 3))), Tensor(s2)), phi, NEAR, FAR, None)
    np.testing.assert_allclose(d2.data, np.clip(2.0 + 2.0 * s2[0], NEAR, FAR))


# --------------------------------------------------------------- full loop

def test_icga_iteration_one_unrolls(rng):
    with precision(np.float64):
        net = randomize(DepthFeatureUNet(rng, channels=4, ladder=(4, 8)), rng)
        phi = randomize(Refiner(rng, 4), rng)
        c1, c2 = cams(8)
        f1, f2 = Tensor(rng.normal(size=(4, 8, 8))), Tensor(rng.normal(size=(4, 8, 8)))
        state = icga_run(f1, f2, c1, c2, net, phi, 1)
        from efree.geometry import warp_features
        d1, g1, d2, g2 = unet_predict(f1, f2, net, NEAR, FAR)
        sim = similarity(g1, warp_features(g2, c1, c2, d1))
        g1r, d1r = refine(g1, d1, sim, phi, NEAR, FAR)
    np.testing.assert_array_equal(state.depths[0].data, d1r.data)
    np.testing.assert_array_equal(state.features[0].data, g1r.data)
    assert state.iteration == 1


def test_icga_rejects_zero_iterations(unet, rng):
    c1, c2 = cams()
    with pytest.raises(ValueError):
        icga_run(Tensor(np.zeros((8, 16, 16))), Tensor(np.zeros((8, 16, 16))), c1, c2, unet, Refiner(rng, 8), 0)


@pytest.mark.parametrize("iterations", [1, 2, 3])
def test_identical_views_give_identical_depths(iterations, rng):
    net = randomize(DepthFeatureUNet(rng, channels=4, ladder=(4, 8)), rng)
    phi = randomize(Refiner(rng, 4), rng)
    c1, _ = cams(8)
    f = Tensor(rng.normal(size=(4, 8, 8)))
    state = icga_run(f, f, c1, c1, net, phi, iterations)
    d1, d2 = (d.data for d in state.depths)
    assert (np.abs(d1 - d2) / d1).max() < 1e-3


def test_icga_view_permutation(rng):
    with precision(np.float64):
        net = randomize(DepthFeatureUNet(rng, channels=4, ladder=(4, 8)), rng)
        phi = randomize(Refiner(rng, 4), rng)
        c1, c2 = cams(8)
        f1, f2 = Tensor(rng.normal(size=(4, 8, 8))), Tensor(rng.normal(size=(4, 8, 8)))
        a = icga_run(f1, f2, c1, c2, net, phi, 2)
        b = icga_run(f2, f1, c2, c1, net, phi, 2).swapped()
    for x, y in zip(a.depths + a.features, b.depths + b.features):
        np.testing.assert_allclose(x.data, y.data, rtol=0, atol=1e-10)


def test_predict_only_bypasses_refinement(unet, rng):
    c1, _ = cams()
    f1, f2 = Tensor(rng.normal(size=(8, 16, 16))), Tensor(rng.normal(size=(8, 16, 16)))
    state = predict_only(f1, f2, c1, unet)
    d1, g1, _, _ = unet_predict(f1, f2, unet, NEAR, FAR)
    assert state.iteration == 0
    np.testing.assert_array_equal(state.depths[0].data, d1.data)


def test_two_iterations_forward_backward_timing(rng):
    net = DepthFeatureUNet(rng, channels=32)
    phi = Refiner(rng, 32)
    c1, c2 = cams(64)
    f1, f2 = (Tensor(rng.normal(size=(32, 64, 64)), requires_grad=True) for _ in range(2))
    t0 = time.perf_counter()
    state = icga_run(f1, f2, c1, c2, net, phi, 2)
    (state.depths[0].mean() + state.features[1].mean()).backward()
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    assert np.isfinite(f1.grad).all() and np.abs(f1.grad).sum() > 0
