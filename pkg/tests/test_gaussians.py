import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import quat_matrix, sh_color
from efree.gaussians import (
    GaussianHead, GaussianSet, assemble, build_covariance, num_param_channels, quat_to_rotmat, read_ply,
    write_ply,
)
from efree.geometry import CameraView, intrinsics
from efree.sh import SH_C0, eval_sh, eval_sh_raw, rgb_to_dc, sh_basis
from efree.tensorcore import Tensor, grad_check, precision


# ---------------------------------------------------------------- covariance

def test_covariance_examples():
    S = build_covariance(Tensor([1.0, 2.0, 3.0]), Tensor([1.0, 0.0, 0.0, 0.0])).data
    np.testing.assert_allclose(S, np.diag([1.0, 4.0, 9.0]), atol=1e-7)
    q = np.random.default_rng(0).normal(size=4)
    S = build_covariance(Tensor([0.5, 0.5, 0.5], dtype=np.float64), Tensor(q, dtype=np.float64)).data
    np.testing.assert_allclose(S, 0.25 * np.eye(3), atol=1e-12)


@given(st.integers(0, 10_000))
def test_covariance_properties(seed):
    rng = np.random.default_rng(seed)
    s, q = rng.uniform(0.01, 2.0, 3), rng.normal(size=4)
    with precision(np.float64):
        S = build_covariance(Tensor(s), Tensor(q)).data
    assert np.abs(S - S.T).max() < 1e-9
    ev = np.linalg.eigvalsh(S)
    assert ev.min() >= -1e-12
    np.testing.assert_allclose(np.sort(ev), np.sort(s * s), rtol=1e-6)
    R = quat_matrix(q)
    np.testing.assert_allclose(S, R @ np.diag(s * s) @ R.T, atol=1e-12)


def test_quat_to_rotmat_batched_matches_oracle(rng):
    q = rng.normal(size=(5, 4))
    with precision(np.float64):
        R = quat_to_rotmat(Tensor(q)).data
    for i in range(5):
        np.testing.assert_allclose(R[i], quat_matrix(q[i]), atol=1e-12)


def test_covariance_gradcheck(rng):
    s = Tensor(rng.uniform(0.2, 1.0, (3, 3)), requires_grad=True, dtype=np.float64)
    q = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
    w = Tensor(rng.normal(size=(3, 3, 3)), dtype=np.float64)
    assert grad_check(lambda s, q: (build_covariance(s, q) * w).sum(), [s, q]) < 1e-5


# ------------------------------------------------------------------------ SH

def test_sh_examples():
    c = np.array([1.0, -0.5, 3.0])
    out = eval_sh(Tensor(c.reshape(3, 1)), Tensor([0.0, 0.0, 1.0])).data
    np.testing.assert_allclose(out, np.clip(0.5 + 0.2820947918 * c, 0, 1), atol=1e-6)
    np.testing.assert_allclose(eval_sh(Tensor(np.zeros((3, 4))), Tensor([1.0, 0.0, 0.0])).data, 0.5)
    assert SH_C0 == pytest.approx(0.2820947918)


def test_sh_zero_direction_rejected():
    with pytest.raises(ValueError):
        eval_sh(Tensor(np.zeros((3, 1))), Tensor([0.0, 0.0, 0.0]))


def test_sh_band1_odd_parity(rng):
    sh = rng.normal(size=(3, 4))
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    with precision(np.float64):
        band1 = sh.copy()
        band1[:, 0] = 0.0
        a = eval_sh_raw(Tensor(band1), Tensor(d)).data - 0.5
        b = eval_sh_raw(Tensor(band1), Tensor(-d)).data - 0.5
    np.testing.assert_allclose(a, -b, atol=1e-15)
    with precision(np.float64):
        basis = sh_basis(Tensor(d), 1).data, sh_basis(Tensor(-d), 1).data
    np.testing.assert_array_equal(basis[0][1:], -basis[1][1:])


@given(st.integers(0, 10_000), st.integers(0, 3))
def test_sh_linearity_pre_clamp(seed, degree):
    rng = np.random.default_rng(seed)
    nb = (degree + 1) ** 2
    a, b = rng.normal(size=(3, nb)), rng.normal(size=(3, nb))
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    with precision(np.float64):
        f = lambda c: eval_sh_raw(Tensor(c), Tensor(d)).data
        np.testing.assert_allclose(f(a + b), f(a) + f(b) - 0.5, atol=1e-12)


def test_sh_matches_oracle(rng):
    sh = rng.normal(scale=0.3, size=(6, 3, 4))
    d = rng.normal(size=(6, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    with precision(np.float64):
        out = eval_sh(Tensor(sh), Tensor(d)).data
    for i in range(6):
        np.testing.assert_allclose(out[i], sh_color(sh[i], d[i]), atol=1e-12)


def test_rgb_to_dc_round_trip():
    rgb = np.array([0.1, 0.5, 0.9])
    out = eval_sh(Tensor(rgb_to_dc(rgb).reshape(3, 1), dtype=np.float64),
                  Tensor([0.0, 0.0, 1.0], dtype=np.float64)).data
    np.testing.assert_allclose(out, rgb, atol=1e-12)


# --------------------------------------------------------------- head/assembly

def test_param_channel_count():
    for deg in range(4):
        assert num_param_channels(deg) == 8 + 3 * (deg + 1) ** 2


def test_head_initial_output(rng):
    head = GaussianHead(rng, feat_channels=4, sh_degree=1, width=8, levels=2)
    raw = head(Tensor(rng.normal(size=(2, 4, 8, 8))), Tensor(rng.uniform(size=(2, 3, 8, 8))))
    assert raw.shape == (2, 20, 8, 8)
    expected = np.zeros(20)
    expected[3] = 1.0
    np.testing.assert_allclose(raw.data, expected[None, :, None, None] * np.ones((2, 20, 8, 8)))


def test_head_rejects_misaligned(rng):
    head = GaussianHead(rng, feat_channels=4, width=8, levels=2)
    with pytest.raises(ValueError):
        head(Tensor(np.zeros((2, 4, 8, 8))), Tensor(np.zeros((2, 3, 4, 4))))


def _cams(size, f=None):
    f = f or size
    K = intrinsics(f, f, size / 2, size / 2)
    return [CameraView(K, np.eye(4), size, size, 0.5, 6.0)] * 2


def test_assemble_counts_and_plane():
    rng = np.random.default_rng(0)
    raw = rng.normal(scale=0.5, size=(2, 20, 64, 64))
    gs = assemble(Tensor(np.full((2, 64, 64), 2.5)), Tensor(raw), _cams(64))
    assert len(gs) == 8192
    np.testing.assert_allclose(gs.means.data[:, 2], 2.5, atol=1e-5)
    gs.validate()
    assert gs.sh.shape == (8192, 3, 4)


def test_assemble_order_is_view_then_row_major():
    raw = np.zeros((2, 20, 3, 4))
    raw[:, 3] = 1.0
    depths = np.stack([np.full((3, 4), 1.0), np.full((3, 4), 2.0)])
    gs = assemble(Tensor(depths, dtype=np.float64), Tensor(raw, dtype=np.float64), _cams(4))
    m = gs.means.data
    np.testing.assert_array_equal(m[:12, 2], 1.0)
    np.testing.assert_array_equal(m[12:, 2], 2.0)
    # row-major: index 1 is pixel (x=1, y=0); index 4 is (x=0, y=1)
    assert m[1, 0] > m[0, 0] and m[1, 1] == m[0, 1]
    assert m[4, 1] > m[0, 1] and m[4, 0] == m[0, 0]


@given(st.integers(0, 1000))
def test_assembled_primitives_satisfy_invariants(seed):
    rng = np.random.default_rng(seed)
    raw = rng.normal(scale=3.0, size=(2, 11, 6, 6))
    depths = rng.uniform(0.5, 6.0, size=(2, 6, 6))
    gs = assemble(Tensor(depths, dtype=np.float64), Tensor(raw, dtype=np.float64), _cams(6), scene_extent=4.0)
    gs.validate()
    s = gs.scales.data
    assert s.min() >= 1e-4 and s.max() <= 2.0


def test_assemble_rejects_non_finite():
    raw = np.zeros((2, 11, 4, 4))
    raw[1, 8, 2, 3] = np.nan
    with pytest.raises(FloatingPointError, match=r"view 1, pixel \(x=3, y=2\)"):
        assemble(Tensor(np.full((2, 4, 4), 2.0)), Tensor(raw), _cams(4))


def test_scale_eigenvalues_match_activation():
    rng = np.random.default_rng(3)
    raw = rng.normal(size=(2, 11, 4, 4))
    gs = assemble(Tensor(np.full((2, 4, 4), 2.0), dtype=np.float64), Tensor(raw, dtype=np.float64), _cams(4))
    with precision(np.float64):
        S = build_covariance(gs.scales, gs.quats).data
    ev = np.sort(np.linalg.eigvalsh(S), axis=-1)
    np.testing.assert_allclose(ev, np.sort(gs.scales.data ** 2, axis=-1), rtol=1e-6)


def test_ply_round_trip(tmp_path, rng):
    m = 7
    q = rng.normal(size=(m, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    gs = GaussianSet.from_arrays(rng.normal(size=(m, 3)), q, rng.uniform(0.01, 0.2, (m, 3)),
                                 rng.uniform(0.1, 0.9, m), rng.normal(size=(m, 3, 4)), dtype=np.float64)
    write_ply(tmp_path / "g.ply", gs)
    text = (tmp_path / "g.ply").read_text()
    assert "property float f_rest_8" in text and "property float rot_3" in text
    back = read_ply(tmp_path / "g.ply")
    for k, v in gs.arrays().items():
        np.testing.assert_allclose(back.arrays()[k], v, rtol=1e-5, atol=1e-6)


def test_empty_and_concat():
    a = GaussianSet.empty(1)
    assert len(a) == 0 and a.sh_degree == 1
    assert len(GaussianSet.concat([a, a])) == 0
