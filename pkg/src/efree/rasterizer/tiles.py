"""Screen-space tile binning shared by both compositing backends."""
from __future__ import annotations

import numpy as np

# fragments are ignored once the Gaussian exponent drops below this (~3 sigma)
POWER_CUTOFF = -4.5
SIGMA_EXTENT = 3.0


def bin_tiles(means2d: np.ndarray, cov_xx: np.ndarray, cov_yy: np.ndarray, depth: np.ndarray,
              visible: np.ndarray, width: int, height: int, tile: int = 16):
    """Assign every visible splat to the tiles its 3-sigma box touches.

    Returns ``(offsets, ids, touched)``: entries of tile ``t`` are
    ``ids[offsets[t]:offsets[t+1]]`` ordered front to back (depth, then source
    index); ``touched`` marks splats that cover at least one pixel centre.
    """
    m = means2d.shape[0]
    ntx = -(-width // tile)
    nty = -(-height // tile)
    ntiles = ntx * nty
    rx = SIGMA_EXTENT * np.sqrt(np.maximum(cov_xx, 0.0)) + 1e-6
    ry = SIGMA_EXTENT * np.sqrt(np.maximum(cov_yy, 0.0)) + 1e-6
    with np.errstate(invalid="ignore"):
        i_lo = np.ceil(means2d[:, 0] - rx - 0.5)
        i_hi = np.floor(means2d[:, 0] + rx - 0.5)
        j_lo = np.ceil(means2d[:, 1] - ry - 0.5)
        j_hi = np.floor(means2d[:, 1] + ry - 0.5)
        touched = (visible & np.isfinite(means2d).all(axis=1)
                   & (i_lo <= i_hi) & (j_lo <= j_hi)
                   & (i_hi >= 0) & (i_lo <= width - 1) & (j_hi >= 0) & (j_lo <= height - 1))
    i_lo = np.clip(i_lo, 0, width - 1)
    i_hi = np.clip(i_hi, 0, width - 1)
    j_lo = np.clip(j_lo, 0, height - 1)
    j_hi = np.clip(j_hi, 0, height - 1)

    gid = np.nonzero(touched)[0]
    tx0 = (i_lo[gid] // tile).astype(np.int64)
    tx1 = (i_hi[gid] // tile).astype(np.int64)
    ty0 = (j_lo[gid] // tile).astype(np.int64)
    ty1 = (j_hi[gid] // tile).astype(np.int64)
    nx = tx1 - tx0 + 1
    counts = nx * (ty1 - ty0 + 1)
    total = int(counts.sum())
    owner = np.repeat(np.arange(gid.size), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    k = np.arange(total) - start
    tx = tx0[owner] + k % nx[owner]
    ty = ty0[owner] + k // nx[owner]
    tiles = ty * ntx + tx
    ids = gid[owner]
    order = np.lexsort((ids, depth[ids], tiles))
    ids = ids[order].astype(np.int64)
    tiles = tiles[order]
    offsets = np.zeros(ntiles + 1, dtype=np.int64)
    np.cumsum(np.bincount(tiles, minlength=ntiles), out=offsets[1:])
    return offsets, ids, touched
