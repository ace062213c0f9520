import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from efree import tensorcore as tc
from efree.tensorcore import (
    Adam, OptimizerState, ShapeError, Tensor, adam_step, grad_check, load_tensors, no_grad,
    precision, save_tensors,
)


def T(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, dtype=np.float64)


# ---------------------------------------------------------------- elementwise

def test_add_and_sigmoid_values():
    np.testing.assert_array_equal(tc.add(T([1, 2]), T([3, 4])).data, [4, 6])
    assert tc.sigmoid(T(0.0)).item() == 0.5


def test_elementwise_dispatch():
    assert np.allclose(tc.elementwise("mul", T([2.0]), T([3.0])).data, [6.0])
    assert np.allclose(tc.elementwise("exp", T([0.0])).data, [1.0])
    with pytest.raises(ValueError):
        tc.elementwise("nope", T([1.0]))


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        tc.add(T([1, 2]), T([1, 2, 3]))


def test_log_sqrt_reject_negative():
    with pytest.raises(ValueError):
        tc.log(T([-1.0]))
    with pytest.raises(ValueError):
        tc.sqrt(T([-1.0]))


def test_broadcast_trailing_and_gradient_reduction(f64):
    a, b = T(np.ones((2, 3))), T([1.0, 2.0, 3.0])
    (a * b).sum().backward()
    np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])
    np.testing.assert_allclose(a.grad, np.tile([1.0, 2.0, 3.0], (2, 1)))


def test_mul_gradcheck_double(rng):
    a, b = T(rng.normal(size=(3, 3))), T(rng.normal(size=(3, 3)))
    w = rng.normal(size=(3, 3))
    assert grad_check(lambda a, b: (a * b * Tensor(w)).sum(), [a, b]) < 1e-6


@pytest.mark.parametrize("name,lo,hi", [
    ("exp", -2, 2), ("log", 0.5, 2), ("sigmoid", -3, 3), ("tanh", -2, 2), ("gelu", -2, 2),
    ("square", -2, 2), ("sqrt", 0.5, 2), ("neg", -2, 2), ("relu", 0.2, 2), ("clamp", -0.9, 0.9),
])
def test_unary_gradcheck(rng, name, lo, hi):
    fn = {"clamp": lambda x: tc.clamp(x, -1.0, 1.0)}.get(name, getattr(tc, name))
    x = T(rng.uniform(lo, hi, size=6))
    w = rng.normal(size=6)
    assert grad_check(lambda x: (fn(x) * Tensor(w)).sum(), [x]) < 1e-4


def test_clamp_gradient_zero_outside(f64):
    x = T([-2.0, 0.0, 2.0])
    tc.clamp(x, -1.0, 1.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


# ------------------------------------------------------------------- matmul

def test_matmul_examples():
    X = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal((T(np.eye(3)) @ T(X)).data, X)
    np.testing.assert_array_equal((T([[1, 2], [3, 4]]) @ T([[1], [1]])).data, [[3], [7]])


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        T(np.ones((2, 3))) @ T(np.ones((4, 2)))


def test_matmul_batched_broadcast_gradcheck(rng):
    a, b = T(rng.normal(size=(2, 4, 5))), T(rng.normal(size=(5, 3)))
    w = rng.normal(size=(2, 4, 3))
    assert grad_check(lambda a, b: ((a @ b) * Tensor(w)).sum(), [a, b]) < 1e-6


# ------------------------------------------------------------------ softmax

def test_softmax_examples():
    np.testing.assert_allclose(tc.softmax(T([0.0, 0.0])).data, [0.5, 0.5])
    out = tc.softmax(T([1000.0, 0.0])).data
    assert np.isfinite(out).all() and np.allclose(out, [1.0, 0.0])


def test_softmax_axis_validation():
    with pytest.raises(ValueError):
        tc.softmax(T([1.0, 2.0]), axis=3)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(-50, 50)))
def test_softmax_slices_sum_to_one(x):
    out = tc.softmax(Tensor(x), axis=-1).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_sum_uses_absolute_branch(rng):
    x = T(rng.normal(size=7))
    assert grad_check(lambda x: tc.softmax(x).sum(), [x]) < 1e-4


# --------------------------------------------------------------- layer norm

def test_layer_norm_examples():
    np.testing.assert_allclose(tc.layer_norm(T([[5.0, 5.0, 5.0]]), T(np.ones(3)), T(np.zeros(3))).data, 0.0)
    out = tc.layer_norm(T(np.random.default_rng(0).normal(size=(2, 4))), T(np.zeros(4)), T(np.full(4, 0.3)))
    np.testing.assert_allclose(out.data, 0.3)


def test_layer_norm_rejects_bad_eps():
    with pytest.raises(ValueError):
        tc.layer_norm(T(np.ones((1, 3))), T(np.ones(3)), T(np.zeros(3)), eps=0.0)


@given(arrays(np.float64, (3, 8), elements=st.floats(-100, 100)))
def test_layer_norm_moments(x):
    if np.ptp(x, axis=-1).min() < 1e-2:
        return
    out = tc.layer_norm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-12).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


# --------------------------------------------------------------------- conv

def test_conv_identity_and_tap_count():
    x = np.random.default_rng(0).normal(size=(1, 4, 4))
    out = tc.conv2d(T(x), T(np.ones((1, 1, 1, 1))), T(np.zeros(1)))
    np.testing.assert_allclose(out.data, x)
    out = tc.conv2d(T(np.ones((1, 3, 3))), T(np.ones((1, 1, 3, 3))), None, stride=1, padding=1)
    assert out.data[0, 1, 1] == 9.0


def test_conv_non_integral_output_rejected():
    with pytest.raises(ShapeError):
        tc.conv2d(T(np.ones((1, 4, 4))), T(np.ones((1, 1, 3, 3))), None, stride=2, padding=0)


def test_conv_gradcheck(rng):
    x, w, b = T(rng.normal(size=(2, 5, 5))), T(rng.normal(size=(3, 2, 3, 3))), T(rng.normal(size=3))
    r = rng.normal(size=(3, 5, 5))
    assert grad_check(lambda x, w, b: (tc.conv2d(x, w, b, 1, 1) * Tensor(r)).sum(), [x, w, b]) < 1e-4


def test_conv_batched_matches_per_sample(rng):
    x, w = rng.normal(size=(2, 3, 7, 7)), rng.normal(size=(4, 3, 3, 3))
    batched = tc.conv2d(T(x, False), T(w, False), None, 2, 1).data
    for n in range(2):
        np.testing.assert_allclose(batched[n], tc.conv2d(T(x[n], False), T(w, False), None, 2, 1).data)


# ----------------------------------------------------------------- resample

def test_resample_examples():
    np.testing.assert_allclose(tc.resample2d(T(np.full((1, 3, 5), 0.7)), "bilinear_up2").data, 0.7)
    out = tc.resample2d(T([[[0.0, 2.0], [4.0, 6.0]]]), "bilinear_down2")
    np.testing.assert_allclose(out.data, [[[3.0]]])
    assert tc.resample2d(T(np.ones((2, 3, 4))), "nearest_up2").shape == (2, 6, 8)


def test_resample_rejects_odd_down2():
    with pytest.raises(ShapeError):
        tc.resample2d(T(np.ones((1, 3, 4))), "bilinear_down2")


@pytest.mark.parametrize("mode", ["bilinear_down2", "bilinear_up2", "nearest_up2"])
def test_resample_gradcheck(rng, mode):
    x = T(rng.normal(size=(1, 4, 4)))
    shape = (1, 2, 2) if mode == "bilinear_down2" else (1, 8, 8)
    r = rng.normal(size=shape)
    assert grad_check(lambda x: (tc.resample2d(x, mode) * Tensor(r)).sum(), [x]) < 1e-4


# -------------------------------------------------------------- grid sample

def test_grid_sample_examples():
    feat = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4)
    coords = np.zeros((2, 1, 1))
    coords[:, 0, 0] = [2.0, 1.0]  # x=2 (col), y=1 (row)
    np.testing.assert_allclose(tc.grid_sample(T(feat), T(coords)).data[:, 0, 0], feat[:, 1, 2])
    coords[:, 0, 0] = [0.5, 0.0]
    out = tc.grid_sample(T(feat), T(coords)).data
    assert out[0, 0, 0] == pytest.approx((feat[0, 0, 0] + feat[0, 0, 1]) / 2)


@given(st.integers(0, 4), st.integers(0, 3))
def test_grid_sample_integer_coordinates_exact(i, j):
    feat = np.random.default_rng(i * 7 + j).normal(size=(3, 4, 5))
    coords = np.array([i, j], dtype=np.float64).reshape(2, 1, 1)
    np.testing.assert_array_equal(tc.grid_sample(Tensor(feat), Tensor(coords)).data[:, 0, 0], feat[:, j, i])


def test_grid_sample_clamps_to_border():
    feat = np.arange(4.0).reshape(1, 2, 2)
    coords = np.array([[[-5.0]], [[10.0]]])
    assert tc.grid_sample(T(feat), T(coords)).data[0, 0, 0] == feat[0, 1, 0]


def test_grid_sample_coord_gradcheck(rng):
    feat = T(rng.normal(size=(2, 4, 4)))
    c = rng.uniform(0.2, 2.8, size=(2, 3, 3))
    c += np.where(np.abs(c - np.round(c)) < 0.05, 0.1, 0.0)
    coords = T(c)
    r = rng.normal(size=(2, 3, 3))
    assert grad_check(lambda f, c: (tc.grid_sample(f, c) * Tensor(r)).sum(), [feat, coords]) < 1e-4


# ------------------------------------------------------------------ backward

def test_backward_examples(f64):
    x = T([1.0, 2.0, 3.0])
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])
    x = T([1.0, 2.0])
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_backward_accumulates_and_fans_out(f64):
    x = T([1.0, 2.0])
    (x + x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 2])
    y = x * 3.0
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, [5, 5])


def test_backward_requires_scalar(f64):
    with pytest.raises(ShapeError):
        (T([1.0, 2.0]) * 2.0).backward()


def test_backward_reaches_all_leaves(f64, rng):
    a, b, c = T(rng.normal(size=3)), T(rng.normal(size=3)), T(rng.normal(size=3))
    (tc.tanh(a * b) + tc.exp(c)).mean().backward()
    assert all(t.grad is not None and t.grad.shape == t.shape for t in (a, b, c))


def test_no_grad_builds_no_graph():
    x = T([1.0])
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_precision_context():
    assert tc.default_dtype() == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


# --------------------------------------------------------------------- adam

def test_adam_first_step_is_signed_lr():
    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True, dtype=np.float64)
    p.grad = np.array([0.3, -5.0, 1e-3])
    st_ = OptimizerState()
    adam_step([p], st_, lr=0.01)
    np.testing.assert_allclose(p.data, [0.99, -1.99, 0.49], atol=1e-6)
    assert p.grad is None and st_.step == 1


def test_adam_zero_grad_keeps_params():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
    st_ = OptimizerState()
    for _ in range(5):
        p.grad = np.zeros(2)
        adam_step([p], st_)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert st_.step == 5 and st_.m[0].shape == p.shape


def test_adam_rejects_missing_grad():
    with pytest.raises(ValueError):
        adam_step([Tensor(np.ones(2), requires_grad=True)], OptimizerState())


def test_adam_quadratic_descent(f64):
    x = Tensor(np.array(1.0), requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(200):
        (x * x).backward()
        opt.step()
    assert abs(x.item()) < 0.05


# ---------------------------------------------------------------- gradcheck

def test_grad_check_linear_exact(rng):
    x = T(rng.normal(size=(3, 4)))
    assert grad_check(lambda x: x.sum(), [x]) < 1e-10


def test_grad_check_rejects_nonfinite():
    with pytest.raises(ValueError):
        grad_check(lambda x: tc.log(x * 0.0 + 1e-320).sum() * np.inf, [T([1.0])])


# --------------------------------------------------------------- checkpoint

def test_checkpoint_format(tmp_path, rng):
    tensors = {"a": rng.normal(size=(2, 3)).astype(np.float32), "b": np.arange(4, dtype=np.float32)}
    save_tensors(tmp_path, tensors)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest == [{"name": "a", "shape": [2, 3], "dtype": "f32"},
                        {"name": "b", "shape": [4], "dtype": "f32"}]
    raw = (tmp_path / "weights.bin").read_bytes()
    assert len(raw) == 4 * 10
    np.testing.assert_array_equal(np.frombuffer(raw[:24], "<f4").reshape(2, 3), tensors["a"])
    back = load_tensors(tmp_path)
    assert list(back) == ["a", "b"]
    np.testing.assert_array_equal(back["b"], tensors["b"])


def test_checkpoint_truncation_detected(tmp_path):
    save_tensors(tmp_path, {"a": np.ones(4, np.float32)})
    (tmp_path / "weights.bin").write_bytes(b"\0" * 8)
    with pytest.raises(ValueError, match="truncated"):
        load_tensors(tmp_path)


def test_module_state_roundtrip(tmp_path):
    from efree.tensorcore import Linear
    rng = np.random.default_rng(0)
    a, b = Linear(rng, 3, 2), Linear(rng, 3, 2)
    save_tensors(tmp_path, a.state_dict())
    b.load_state_dict(load_tensors(tmp_path))
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    with pytest.raises(KeyError):
        b.load_state_dict({"weight": a.weight.data})
