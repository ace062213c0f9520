"""Image quality metrics and cross-view depth consistency."""
from __future__ import annotations

import numpy as np

from ..geometry import CameraView, pixel_centers, project, unproject

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _same_shape(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _same_shape(a, b)
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / err))


def _gauss_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering over the last two axes."""
    k = g.size
    h, w = x.shape[-2:]
    rows = sum(g[i] * x[..., i:h - k + 1 + i, :] for i in range(k))
    return sum(g[i] * rows[..., :, i:w - k + 1 + i] for i in range(k))


def ssim(a, b) -> float:
    """Single-scale SSIM over (C,H,W) or (H,W) images in [0,1], averaged over channels."""
    a, b = _same_shape(a, b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if a.ndim == 2:
        a, b = a[None], b[None]
    g = _gauss_window(SSIM_WINDOW, SSIM_SIGMA)
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    per_channel = (num / den).reshape(a.shape[0], -1).mean(axis=1)
    return float(per_channel.mean())


def _bilinear(img: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Sample (H,W) at continuous pixel coords (N,2) (centres at +0.5), border clamp."""
    h, w = img.shape
    x = np.clip(u[:, 0] - 0.5, 0, w - 1)
    y = np.clip(u[:, 1] - 0.5, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(int), w - 2) if w > 1 else np.zeros(len(x), int)
    y0 = np.minimum(np.floor(y).astype(int), h - 2) if h > 1 else np.zeros(len(y), int)
    fx, fy = x - x0, y - y0
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    return ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
            + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))


def overlap_mask(cam1: CameraView, cam2: CameraView, depth1: np.ndarray) -> np.ndarray:
    """View-1 pixels whose point at ``depth1`` lands inside view 2 with positive depth."""
    h, w = depth1.shape
    u = pixel_centers(w, h).reshape(-1, 2)
    X = unproject(cam1, u, depth1.reshape(-1))
    u2, z2, valid = project(cam2, X)
    inside = (u2[:, 0] >= 0) & (u2[:, 0] < cam2.width) & (u2[:, 1] >= 0) & (u2[:, 1] < cam2.height)
    return (valid & (z2 > 0) & inside).reshape(h, w)


def depth_consistency(d1, d2, cam1: CameraView, cam2: CameraView, gt1) -> float:
    """Mean |d1(u) - z_{2->1}(u)| over ground-truth overlapping view-1 pixels.

    ``z_{2->1}(u)`` is the view-1 depth of view 2's predicted surface point at
    the pixel where u's ground-truth point lands in view 2.
    """
    d1, d2, gt1 = (np.asarray(x, dtype=np.float64) for x in (d1, d2, gt1))
    h, w = d1.shape
    mask = overlap_mask(cam1, cam2, gt1).reshape(-1)
    if not mask.any():
        return 0.0
    u = pixel_centers(w, h).reshape(-1, 2)[mask]
    u2, _, _ = project(cam2, unproject(cam1, u, gt1.reshape(-1)[mask]))
    X2 = unproject(cam2, u2, _bilinear(d2, u2))
    _, z21, _ = project(cam1, X2)
    return float(np.mean(np.abs(d1.reshape(-1)[mask] - z21)))
