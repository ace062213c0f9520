"""Composite differentiable operations: attention pieces, convolution, resampling."""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_op, matmul, unbroadcast


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gamma * xhat + beta``."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        return dx, dgamma, dbeta

    return make_op(out, (x, gamma, beta), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else y + bias


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"conv2d output size not integral: (n={n} + 2*{pad} - k={k}) / stride={stride}")
    return span // stride + 1


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation on (C,H,W) or (N,C,H,W) input via im2col."""
    x, w = as_tensor(x), as_tensor(w)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, cin, h, wd = xd.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    ho = _out_size(h, kh, stride, padding)
    wo = _out_size(wd, kw, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd

    cols = np.empty((n, cin, kh, kw, ho, wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(n, cin * kh * kw, ho * wo)
    wmat = w.data.reshape(cout, -1)
    out = np.matmul(wmat, cols)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None]
    out = out.reshape(n, cout, ho, wo)
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        gm = g4.reshape(n, cout, ho * wo)
        gw = gx = gb = None
        if w.requires_grad:
            gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = gm.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gm).reshape(n, cin, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
            if squeeze:
                gx = gx[0]
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _interp_matrix(n: int, mode: str, dtype) -> np.ndarray:
    if mode == "bilinear_down2":
        m = np.zeros((n // 2, n), dtype=dtype)
        idx = np.arange(n // 2)
        m[idx, 2 * idx] = 0.5
        m[idx, 2 * idx + 1] = 0.5
        return m
    if mode == "nearest_up2":
        m = np.zeros((2 * n, n), dtype=dtype)
        m[np.arange(2 * n), np.arange(2 * n) // 2] = 1.0
        return m
    if mode == "bilinear_up2":
        # half-pixel centres, edge-clamped
        src = np.clip((np.arange(2 * n) + 0.5) / 2.0 - 0.5, 0, n - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n - 1)
        f = src - i0
        m = np.zeros((2 * n, n), dtype=dtype)
        np.add.at(m, (np.arange(2 * n), i0), 1.0 - f)
        np.add.at(m, (np.arange(2 * n), i1), f)
        return m
    raise ValueError(f"unknown resample mode {mode!r}")


def resample2d(x, mode: str) -> Tensor:
    """Halve or double the two trailing (spatial) dims of x."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if mode == "bilinear_down2" and (h % 2 or w % 2):
        raise ShapeError(f"bilinear_down2 needs even spatial dims, got {h}x{w}")
    mh = Tensor(_interp_matrix(h, mode, x.dtype))
    mw = Tensor(_interp_matrix(w, mode, x.dtype).T.copy())
    return matmul(matmul(mh, x), mw)


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------

def grid_sample(feat, coords) -> Tensor:
    """Bilinearly sample ``feat`` (C,H,W) at ``coords`` (2,H',W').

    ``coords[0]`` is the column (x) and ``coords[1]`` the row (y), both in
    pixel-index units: integer (i, j) hits ``feat[:, j, i]`` exactly.
    Out-of-range coordinates clamp to the border.
    """
    feat, coords = as_tensor(feat), as_tensor(coords)
    c, h, w = feat.shape
    if coords.ndim != 3 or coords.shape[0] != 2:
        raise ShapeError(f"coords must be (2,H',W'), got {coords.shape}")
    x = coords.data[0]
    y = coords.data[1]
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    inside_x = (x > 0) & (x < w - 1)
    inside_y = (y > 0) & (y < h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0).astype(feat.dtype)
    fy = (yc - y0).astype(feat.dtype)

    fd = feat.data.reshape(c, h * w)
    i00, i01 = y0 * w + x0, y0 * w + x1
    i10, i11 = y1 * w + x0, y1 * w + x1
    v00, v01, v10, v11 = fd[:, i00], fd[:, i01], fd[:, i10], fd[:, i11]
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    out = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11

    def backward(g):
        gfeat = gcoords = None
        if feat.requires_grad:
            offs = (np.arange(c) * (h * w))[:, None]
            idx = np.concatenate([offs + i.ravel() for i in (i00, i01, i10, i11)], axis=1)
            wts = np.concatenate([(g * wt).reshape(c, -1) for wt in (w00, w01, w10, w11)], axis=1)
            gf = np.bincount(idx.ravel(), weights=wts.ravel(), minlength=c * h * w)
            gfeat = gf.reshape(c, h, w).astype(feat.dtype)
        if coords.requires_grad:
            dfx = ((v01 - v00) * (1 - fy) + (v11 - v10) * fy)
            dfy = ((v10 - v00) * (1 - fx) + (v11 - v01) * fx)
            gx = (g * dfx).sum(axis=0) * inside_x
            gy = (g * dfy).sum(axis=0) * inside_y
            gcoords = np.stack([gx, gy]).astype(coords.dtype)
        return gfeat, gcoords

    return make_op(out.astype(feat.dtype, copy=False), (feat, coords), backward)


def mse(a, b) -> Tensor:
    d = as_tensor(a) - b
    return (d * d).mean()


__all__ = [
    "softmax", "layer_norm", "linear", "conv2d", "resample2d", "grid_sample", "mse",
    "unbroadcast",
]
