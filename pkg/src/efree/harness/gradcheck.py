"""Registered finite-difference suites, one per module."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import tensorcore as tc
from ..gaussians import GaussianSet, activate, build_covariance
from ..geometry import CameraView, intrinsics, look_at, warp_features
from ..icga import DepthFeatureUNet, Refiner, icga_run
from ..perceiver import CrossBlock, MultiHeadAttention, grid_positions, rope_embed
from ..rasterizer import rasterize
from ..sh import eval_sh
from ..tensorcore import Tensor, grad_check, precision

ELEMENTARY_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass
class CheckResult:
    suite: str
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


def _t(rng, *shape, lo=None, hi=None):
    x = rng.uniform(lo, hi, size=shape) if lo is not None else rng.normal(size=shape)
    return Tensor(x, requires_grad=True, dtype=np.float64)


# ---------------------------------------------------------------------------
# suites: each returns a list of (name, fn, inputs, default tol)
# ---------------------------------------------------------------------------

def _tensorcore_cases(rng):
    cases = []
    unary = {
        "exp": (tc.exp, None), "log": (tc.log, (0.5, 2.0)), "sqrt": (tc.sqrt, (0.5, 2.0)),
        "sigmoid": (tc.sigmoid, None), "tanh": (tc.tanh, None), "gelu": (tc.gelu, None),
        "square": (tc.square, None), "negate": (tc.neg, None),
        "relu": (tc.relu, (0.1, 1.0)), "clamp": (lambda x: tc.clamp(x, -5.0, 5.0), None),
    }
    for name, (f, rg) in unary.items():
        x = _t(rng, 3, 4) if rg is None else _t(rng, 3, 4, lo=rg[0], hi=rg[1])
        if name == "relu":
            x.data *= np.where(rng.uniform(size=x.shape) < 0.5, -1.0, 1.0)
        cases.append((name, lambda x, f=f, r=rng.normal(size=(3, 4)): (f(x) * Tensor(r)).sum(), [x]))
    for name, f in {"add": tc.add, "sub": tc.sub, "mul": tc.mul, "div": tc.div}.items():
        a = _t(rng, 3, 3)
        b = _t(rng, 3, 3, lo=0.5, hi=2.0) if name == "div" else _t(rng, 3, 3)
        r = rng.normal(size=(3, 3))
        cases.append((name, lambda a, b, f=f, r=r: (f(a, b) * Tensor(r)).sum(), [a, b]))
    r = rng.normal(size=(4, 3))
    cases.append(("matmul", lambda a, b: ((a @ b) * Tensor(r)).sum(), [_t(rng, 4, 5), _t(rng, 5, 3)]))
    r7 = rng.normal(size=7)
    cases.append(("softmax", lambda x: (tc.softmax(x) * Tensor(r7)).sum(), [_t(rng, 7)]))
    r28 = rng.normal(size=(2, 8))
    cases.append(("layer_norm", lambda x, g, b: (tc.layer_norm(x, g, b) * Tensor(r28)).sum(),
                  [_t(rng, 2, 8), _t(rng, 8), _t(rng, 8)]))
    for stride in (1, 2):
        out = (3, 5, 5) if stride == 1 else (3, 3, 3)
        rc = rng.normal(size=out)
        cases.append((f"conv2d_s{stride}",
                      lambda x, w, b, s=stride, rc=rc: (tc.conv2d(x, w, b, s, 1) * Tensor(rc)).sum(),
                      [_t(rng, 2, 5, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)]))
    for mode, shp in (("bilinear_down2", (1, 2, 2)), ("bilinear_up2", (1, 8, 8)), ("nearest_up2", (1, 8, 8))):
        rr = rng.normal(size=shp)
        cases.append((f"resample2d_{mode}", lambda x, m=mode, rr=rr: (tc.resample2d(x, m) * Tensor(rr)).sum(),
                      [_t(rng, 1, 4, 4)]))
    coords = Tensor(rng.uniform(0.2, 2.8, size=(2, 3, 3)), requires_grad=True, dtype=np.float64)
    coords.data += np.where(np.abs(coords.data - np.round(coords.data)) < 0.05, 0.1, 0.0)
    rg = rng.normal(size=(2, 3, 3))
    cases.append(("grid_sample", lambda f, c: (tc.grid_sample(f, c) * Tensor(rg)).sum(),
                  [_t(rng, 2, 4, 4), coords]))
    rs = rng.normal(size=(2, 6))
    cases.append(("shape_ops", lambda x, y: (tc.concat([x.reshape(2, 3).T.T, y[:, 1:4]], axis=1)
                                             * Tensor(rs)).sum() + tc.stack([x, x]).mean(),
                  [_t(rng, 3, 2), _t(rng, 2, 5)]))
    return [(n, f, i, ELEMENTARY_TOL) for n, f, i in cases]


def _perceiver_cases(rng):
    cases = []
    pos = grid_positions(1, 3)
    mha = MultiHeadAttention(rng, 8, 2, zero_out=False).astype(np.float64)
    r = rng.normal(size=(3, 8))
    cases.append(("attention", lambda x, wq: (mha(x, x, pos, pos) * Tensor(r)).sum(),
                  [_t(rng, 3, 8), mha.q.weight]))
    r4 = rng.normal(size=(4, 4))
    cases.append(("rope", lambda x: (rope_embed(x, grid_positions(2, 2)) * Tensor(r4)).sum(),
                  [_t(rng, 4, 4)]))
    blk = CrossBlock(rng, 8, 2).astype(np.float64)
    for lin in (blk.self_attn.out, blk.cross_attn.out, blk.mlp.fc2):
        lin.weight.data = rng.normal(scale=0.3, size=lin.weight.shape)
    pos4 = grid_positions(2, 2)
    ra, rb = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))

    def cross(a, b):
        ya, yb = blk(a, b, pos4, pos4)
        return (ya * Tensor(ra)).sum() + (yb * Tensor(rb)).sum()
    cases.append(("cross_block", cross, [_t(rng, 4, 8), _t(rng, 4, 8)]))
    return [(n, f, i, COMPOSITE_TOL if n == "cross_block" else ELEMENTARY_TOL) for n, f, i in cases]


def toy_cameras(size: int = 8, baseline_deg: float = 8.0) -> tuple[CameraView, CameraView]:
    f = 0.5 * size / np.tan(np.radians(30.0))
    K = intrinsics(f, f, size / 2, size / 2)
    b = np.radians(baseline_deg) / 2
    cams = []
    for a in (-b, b):
        eye = [1.6 * np.sin(a), 0.0, -1.6 * np.cos(a)]
        cams.append(CameraView(K, look_at(eye, [0.0, 0.0, 0.0]), size, size, 0.5, 6.0))
    return cams[0], cams[1]


def _geometry_cases(rng):
    c1, c2 = toy_cameras()
    r = rng.normal(size=(3, 8, 8))
    depth = Tensor(rng.uniform(1.4, 2.0, size=(8, 8)), requires_grad=True, dtype=np.float64)
    return [("warp_features", lambda g, d: (warp_features(g, c1, c2, d) * Tensor(r)).sum(),
             [_t(rng, 3, 8, 8), depth], COMPOSITE_TOL)]


def _gaussians_cases(rng):
    r = rng.normal(size=(5, 3, 3))
    q = _t(rng, 5, 4)
    cases = [("build_covariance", lambda s, q: (build_covariance(s, q) * Tensor(r)).sum(),
              [_t(rng, 5, 3, lo=0.2, hi=1.0), q], ELEMENTARY_TOL)]
    dirs = rng.normal(size=(5, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rc = rng.normal(size=(5, 3))
    sh = Tensor(rng.normal(scale=0.3, size=(5, 3, 9)), requires_grad=True, dtype=np.float64)
    cases.append(("eval_sh", lambda c, d: (eval_sh(c, d) * Tensor(rc)).sum(),
                  [sh, Tensor(dirs, requires_grad=True, dtype=np.float64)], ELEMENTARY_TOL))
    c1, _ = toy_cameras(4)
    raw = Tensor(rng.normal(scale=0.5, size=(11, 4, 4)), requires_grad=True, dtype=np.float64)
    depth = Tensor(rng.uniform(1.0, 2.0, size=(4, 4)), requires_grad=True, dtype=np.float64)
    rr = [rng.normal(size=s) for s in ((16, 3), (16, 4), (16,), (16, 3, 1))]

    def act(raw, d):
        outs = activate(raw, d, c1, scene_extent=4.0)
        return sum((o * Tensor(w)).sum() for o, w in zip(outs, rr))
    cases.append(("activate", act, [raw, depth], COMPOSITE_TOL))
    return cases


def _icga_cases(rng):
    c1, c2 = toy_cameras()
    unet = DepthFeatureUNet(rng, channels=4, ladder=(4, 8), heads=2).astype(np.float64)
    phi = Refiner(rng, channels=4).astype(np.float64)
    phi.conv2.weight.data = rng.normal(scale=0.2, size=phi.conv2.weight.shape)
    r = [rng.normal(size=(4, 8, 8)) for _ in range(2)] + [rng.normal(size=(8, 8)) for _ in range(2)]

    def one_iteration(f1, f2, w_phi):
        st = icga_run(f1, f2, c1, c2, unet, phi, iterations=1)
        g1, g2 = st.features
        d1, d2 = st.depths
        return ((g1 * Tensor(r[0])).sum() + (g2 * Tensor(r[1])).sum()
                + (d1 * Tensor(r[2])).sum() + (d2 * Tensor(r[3])).sum())
    return [("icga_iteration", one_iteration,
             [_t(rng, 4, 8, 8), _t(rng, 4, 8, 8), phi.conv2.weight], COMPOSITE_TOL)]


def toy_splats(rng, m: int = 3) -> tuple[list[Tensor], CameraView]:
    cam = CameraView(intrinsics(8, 8, 4, 4), np.eye(4), 8, 8, 0.1, 10.0)
    means = np.c_[rng.uniform(-0.3, 0.3, (m, 2)), rng.uniform(2, 3, m)]
    q = rng.normal(size=(m, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    arrays = (means, q, rng.uniform(0.4, 0.8, (m, 3)), rng.uniform(0.2, 0.8, m),
              rng.normal(0, 0.2, (m, 3, 4)))
    return [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays], cam


def _rasterizer_cases(rng):
    inputs, cam = toy_splats(rng)
    target = rng.uniform(size=(3, 8, 8))
    rd = rng.normal(size=(8, 8))

    def loss(mu, q, s, a, sh):
        img, depth, alpha = rasterize(GaussianSet(mu, q, s, a, sh), cam, background=(0.2, 0.2, 0.2))
        return ((img - Tensor(target)) ** 2).mean() + (depth * Tensor(rd)).mean() * 0.01 + alpha.mean()
    return [("rasterize", loss, inputs, COMPOSITE_TOL)]


SUITES: dict[str, Callable] = {
    "tensorcore": _tensorcore_cases,
    "perceiver": _perceiver_cases,
    "geometry": _geometry_cases,
    "gaussians": _gaussians_cases,
    "icga": _icga_cases,
    "rasterizer": _rasterizer_cases,
}


def run_suite(name: str, tol: float | None = None, seed: int = 0) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(f"unknown gradcheck suite {name!r}; choose from {sorted(SUITES)}")
    rng = np.random.default_rng(seed)
    results = []
    with precision(np.float64):
        for case, fn, inputs, default_tol in SUITES[name](rng):
            use_tol = default_tol if tol is None else tol
            err = grad_check(fn, inputs, eps=1e-5)
            results.append(CheckResult(name, case, err, use_tol))
    return results


def run_suites(names, tol: float | None = None) -> list[CheckResult]:
    out = []
    for n in names:
        out += run_suite(n, tol)
    return out
