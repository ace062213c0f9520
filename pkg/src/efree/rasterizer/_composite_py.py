"""Pure numpy compositing backend.

Each tile is processed as a dense (pixels x fragments) block, so the
front-to-back recursion becomes a row-wise cumulative product.
"""
from __future__ import annotations

import numpy as np

from .tiles import POWER_CUTOFF

ALPHA_MAX = 0.99
NGRAD_GEOM = 6  # mean x, mean y, conic a, conic b, conic c, opacity


def _tile_block(t, offsets, ids, means2d, conics, opacity, width, height, tile):
    ntx = -(-width // tile)
    ty, tx = divmod(t, ntx)
    x0, y0 = tx * tile, ty * tile
    x1, y1 = min(x0 + tile, width), min(y0 + tile, height)
    gy, gx = np.mgrid[y0:y1, x0:x1]
    px = (gx.ravel() + 0.5)[:, None]
    py = (gy.ravel() + 0.5)[:, None]
    g = ids[offsets[t]:offsets[t + 1]]
    dx = px - means2d[g, 0][None]
    dy = py - means2d[g, 1][None]
    ca, cb, cc = conics[g, 0][None], conics[g, 1][None], conics[g, 2][None]
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    valid = power >= POWER_CUTOFF
    gauss = np.where(valid, np.exp(np.where(valid, power, 0.0)), 0.0)
    raw = opacity[g][None] * gauss
    a = np.minimum(raw, ALPHA_MAX)
    return (y0, y1, x0, x1), g, dx, dy, valid, gauss, raw, a


def _transmittance(a):
    one_minus = 1.0 - a
    t_after = np.cumprod(one_minus, axis=1)
    t_before = np.empty_like(t_after)
    t_before[:, :1] = 1.0
    t_before[:, 1:] = t_after[:, :-1]
    t_final = t_after[:, -1] if a.shape[1] else np.ones(a.shape[0])
    return t_before, t_final


def forward(means2d, conics, opacity, feats, background, offsets, ids, width, height,
            tile=16, num_threads=1):
    """Composite K feature channels plus accumulated alpha; returns (K+1, H, W)."""
    k = feats.shape[1]
    out = np.empty((k + 1, height, width))
    ntiles = offsets.size - 1
    for t in range(ntiles):
        (y0, y1, x0, x1), g, _, _, _, _, _, a = _tile_block(
            t, offsets, ids, means2d, conics, opacity, width, height, tile)
        t_before, t_final = _transmittance(a)
        w = a * t_before
        block = w @ feats[g] + t_final[:, None] * background[None]
        hh, ww = y1 - y0, x1 - x0
        out[:k, y0:y1, x0:x1] = block.T.reshape(k, hh, ww)
        out[k, y0:y1, x0:x1] = (1.0 - t_final).reshape(hh, ww)
    return out


def backward(grad_out, means2d, conics, opacity, feats, background, offsets, ids, width,
             height, tile=16, num_threads=1):
    """Per-entry gradients, shape (E, 6 + K), in the same order as ``ids``."""
    k = feats.shape[1]
    entry = np.zeros((ids.size, NGRAD_GEOM + k))
    ntiles = offsets.size - 1
    for t in range(ntiles):
        lo, hi = offsets[t], offsets[t + 1]
        if lo == hi:
            continue
        (y0, y1, x0, x1), g, dx, dy, valid, gauss, raw, a = _tile_block(
            t, offsets, ids, means2d, conics, opacity, width, height, tile)
        t_before, t_final = _transmittance(a)
        w = a * t_before
        go = grad_out[:, y0:y1, x0:x1].reshape(k + 1, -1).T      # (P, K+1)
        gf, ga_out = go[:, :k], go[:, k]
        f = feats[g]                                               # (L, K)

        d_feat = w.T @ gf                                          # (L, K)
        h = gf @ f.T                                               # (P, L)
        wh = w * h
        suffix = np.cumsum(wh[:, ::-1], axis=1)[:, ::-1] - wh      # sum over later fragments
        tail = suffix + (t_final * (gf @ background))[:, None]
        one_minus = 1.0 - a
        d_a = h * t_before - tail / one_minus + (ga_out * t_final)[:, None] / one_minus

        live = valid & (raw < ALPHA_MAX)
        d_raw = np.where(live, d_a, 0.0)
        d_op = (d_raw * gauss).sum(axis=0)
        d_pow = d_raw * raw
        ca, cb, cc = conics[g, 0][None], conics[g, 1][None], conics[g, 2][None]
        entry[lo:hi, 0] = (d_pow * (ca * dx + cb * dy)).sum(axis=0)
        entry[lo:hi, 1] = (d_pow * (cc * dy + cb * dx)).sum(axis=0)
        entry[lo:hi, 2] = (d_pow * (-0.5 * dx * dx)).sum(axis=0)
        entry[lo:hi, 3] = (d_pow * (-dx * dy)).sum(axis=0)
        entry[lo:hi, 4] = (d_pow * (-0.5 * dy * dy)).sum(axis=0)
        entry[lo:hi, 5] = d_op
        entry[lo:hi, NGRAD_GEOM:] = d_feat
    return entry
