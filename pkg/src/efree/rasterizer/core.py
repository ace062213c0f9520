"""EWA projection of 3D Gaussians and the differentiable compositing op."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..gaussians import GaussianSet, build_covariance, gaussian_colors
from ..geometry import CameraView
from ..tensorcore import Tensor, as_tensor, concat, make_op, stack, where
from . import _composite_py
from .tiles import bin_tiles

LOWPASS = 0.3      # px^2 added to every projected covariance
ALPHA_MAX = _composite_py.ALPHA_MAX
NGRAD_GEOM = _composite_py.NGRAD_GEOM


def get_backend() -> str:
    from . import BACKEND
    return BACKEND


def set_backend(name: str) -> None:
    """Switch between ``"compiled"`` and ``"python"`` kernels at runtime."""
    import efree.rasterizer as pkg

    if name == "python":
        pkg._kernels, pkg.BACKEND = _composite_py, "python"
    elif name == "compiled":
        from . import _composite_ext
        pkg._kernels, pkg.BACKEND = _composite_ext, "compiled"
    else:
        raise ValueError(f"unknown backend {name!r}")


def _kernels():
    import efree.rasterizer as pkg
    return pkg._kernels


def default_threads() -> int:
    cap = os.environ.get("EFREE_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


@dataclass
class Fragments:
    means2d: Tensor   # (M, 2) pixel coordinates
    conics: Tensor    # (M, 3) inverse covariance (a, b, c)
    cov2d: np.ndarray  # (M, 3) covariance (xx, xy, yy), for binning
    depth: Tensor     # (M,) camera z
    colors: Tensor    # (M, 3)
    opacity: Tensor   # (M,)
    visible: np.ndarray  # in front of the near plane


@dataclass
class SplatFragment:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    source: int


def project_gaussians(gs: GaussianSet, cam: CameraView, lowpass: float = LOWPASS) -> Fragments:
    """Project every primitive to screen space (EWA, first-order perspective)."""
    dt = gs.means.dtype
    R = cam.R.astype(dt)
    xc = (gs.means - Tensor(cam.t.astype(dt))) @ Tensor(R)
    visible = xc.data[:, 2] > cam.near
    x, y = xc[:, 0], xc[:, 1]
    z = where(visible, xc[:, 2], 1.0)
    fx, fy = cam.focal
    cx, cy = float(cam.K[0, 2]), float(cam.K[1, 2])
    inv_z = 1.0 / z
    means2d = stack([fx * x * inv_z + cx, fy * y * inv_z + cy], axis=-1)

    sigma = build_covariance(gs.scales, gs.quats)
    sc = Tensor(R.T.copy()) @ sigma @ Tensor(R)
    j00, j11 = fx * inv_z, fy * inv_z
    j02 = -fx * x * inv_z * inv_z
    j12 = -fy * y * inv_z * inv_z
    s00, s01, s02 = sc[:, 0, 0], sc[:, 0, 1], sc[:, 0, 2]
    s11, s12, s22 = sc[:, 1, 1], sc[:, 1, 2], sc[:, 2, 2]
    a = j00 * j00 * s00 + 2.0 * j00 * j02 * s02 + j02 * j02 * s22 + lowpass
    b = j00 * j11 * s01 + j00 * j12 * s02 + j02 * j11 * s12 + j02 * j12 * s22
    c = j11 * j11 * s11 + 2.0 * j11 * j12 * s12 + j12 * j12 * s22 + lowpass
    det = a * c - b * b
    conics = stack([c / det, -b / det, a / det], axis=-1)
    cov2d = np.stack([a.data, b.data, c.data], axis=-1)
    return Fragments(means2d, conics, cov2d, z, gaussian_colors(gs, cam), gs.opacities, visible)


def project_gaussian(gs: GaussianSet, cam: CameraView, index: int = 0) -> SplatFragment | None:
    """Screen-space fragment of primitive ``index``, or None when it is culled."""
    frag = project_gaussians(gs, cam)
    _, _, touched = bin_tiles(frag.means2d.data.astype(np.float64), frag.cov2d[:, 0],
                              frag.cov2d[:, 2], frag.depth.data, frag.visible,
                              cam.width, cam.height)
    if not touched[index]:
        return None
    cv = frag.cov2d[index]
    return SplatFragment(frag.means2d.data[index].copy(),
                         np.array([[cv[0], cv[1]], [cv[1], cv[2]]]),
                         float(frag.depth.data[index]), frag.colors.data[index].copy(),
                         float(frag.opacity.data[index]), index)


def composite(means2d, conics, opacity, feats, background, cov2d: np.ndarray, depth: np.ndarray,
              visible: np.ndarray, width: int, height: int, tile: int = 16,
              threads: int | None = None) -> Tensor:
    """Front-to-back compositing of K feature channels; returns (K+1, H, W).

    The last output channel is accumulated alpha.  ``background`` has K
    entries and is weighted by the final transmittance.
    """
    means2d, conics, opacity, feats = (as_tensor(t) for t in (means2d, conics, opacity, feats))
    threads = threads or default_threads()
    f64 = lambda t: np.ascontiguousarray(t.data, dtype=np.float64)  # noqa: E731
    m2, cn, op, ft = f64(means2d), f64(conics), f64(opacity), f64(feats)
    bg = np.ascontiguousarray(background, dtype=np.float64)
    offsets, ids, _ = bin_tiles(m2, cov2d[:, 0], cov2d[:, 2], np.asarray(depth, np.float64),
                                visible, width, height, tile)
    kern = _kernels()
    out = kern.forward(m2, cn, op, ft, bg, offsets, ids, width, height, tile, threads)
    k = ft.shape[1]
    m = m2.shape[0]

    def backward(g):
        g64 = np.ascontiguousarray(g, dtype=np.float64)
        entry = kern.backward(g64, m2, cn, op, ft, bg, offsets, ids, width, height, tile, threads)
        if hasattr(kern, "reduce_entries"):
            per = kern.reduce_entries(entry, ids, m)
        else:
            per = np.zeros((m, entry.shape[1]))
            np.add.at(per, ids, entry)
        return (per[:, 0:2].astype(means2d.dtype), per[:, 2:5].astype(conics.dtype),
                per[:, 5].astype(opacity.dtype), per[:, NGRAD_GEOM:NGRAD_GEOM + k].astype(feats.dtype))

    return make_op(np.asarray(out).astype(feats.dtype), (means2d, conics, opacity, feats), backward)


def rasterize(gs: GaussianSet, cam: CameraView, background=(0.0, 0.0, 0.0), tile: int = 16,
              threads: int | None = None):
    """Render ``(image (3,H,W), expected depth (H,W), alpha (H,W))``."""
    frag = project_gaussians(gs, cam)
    dt = gs.means.dtype
    feats = concat([frag.colors, frag.depth.reshape(-1, 1)], axis=1)
    bg = np.concatenate([np.asarray(background, dtype=np.float64), [0.0]])
    out = composite(frag.means2d, frag.conics, frag.opacity, feats, bg, frag.cov2d,
                    frag.depth.data, frag.visible, cam.width, cam.height, tile, threads)
    image = out[0:3]
    alpha = out[4]
    depth = out[3] / where(alpha.data > 1e-6, alpha, np.asarray(1e-6, dtype=dt))
    return image, depth, alpha
