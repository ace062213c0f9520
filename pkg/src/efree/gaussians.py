"""Per-pixel Gaussian primitives: parameter heads, covariance, assembly, PLY export."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraView, unproject_depth_map
from .sh import SH_C0, eval_sh, num_coeffs
from .tensorcore import (
    Module, Tensor, as_tensor, clamp, concat, exp, sigmoid, sqrt, stack,
)

GEOM_CHANNELS = 8  # 3 scale logits, 4 quaternion, 1 opacity logit
MIN_SCALE = 1e-4


def num_param_channels(sh_degree: int) -> int:
    return GEOM_CHANNELS + 3 * num_coeffs(sh_degree)


@dataclass
class GaussianSet:
    """M primitives; ``sh`` has shape (M, 3, (deg+1)^2) and quats are (w, x, y, z)."""

    means: Tensor
    quats: Tensor
    scales: Tensor
    opacities: Tensor
    sh: Tensor

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh.shape[-1]))) - 1

    @classmethod
    def from_arrays(cls, means, quats, scales, opacities, sh, requires_grad: bool = False,
                    dtype=None) -> "GaussianSet":
        def t(x):
            return Tensor(np.asarray(x), requires_grad=requires_grad, dtype=dtype)
        return cls(t(means), t(quats), t(scales), t(opacities), t(sh))

    @classmethod
    def empty(cls, sh_degree: int = 0, dtype=np.float64) -> "GaussianSet":
        nb = num_coeffs(sh_degree)
        z = np.zeros
        return cls.from_arrays(z((0, 3)), z((0, 4)), z((0, 3)), z((0,)), z((0, 3, nb)), dtype=dtype)

    @classmethod
    def concat(cls, sets: list["GaussianSet"]) -> "GaussianSet":
        return cls(*(concat([getattr(s, f) for s in sets], axis=0)
                     for f in ("means", "quats", "scales", "opacities", "sh")))

    def arrays(self) -> dict[str, np.ndarray]:
        return {f: getattr(self, f).data for f in ("means", "quats", "scales", "opacities", "sh")}

    def validate(self) -> None:
        q = self.quats.data
        if np.abs(np.linalg.norm(q, axis=-1) - 1.0).max(initial=0.0) > 1e-6:
            raise ValueError("quaternions are not unit length")
        if np.any(self.scales.data <= 0):
            raise ValueError("non-positive Gaussian scale")
        a = self.opacities.data
        if np.any(a <= 0) or np.any(a >= 1):
            raise ValueError("opacity outside (0, 1)")
        for name, arr in self.arrays().items():
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in {name}")

    def save_ply(self, path) -> None:
        write_ply(path, self)


# ---------------------------------------------------------------------------
# covariance
# ---------------------------------------------------------------------------

def quat_to_rotmat(q) -> Tensor:
    """Rotation matrices (..., 3, 3) from quaternions (..., 4); normalizes first."""
    q = as_tensor(q)
    q = q / sqrt((q * q).sum(axis=-1, keepdims=True) + 1e-24)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ]
    return stack(rows, axis=-2)


def build_covariance(scales, quats) -> Tensor:
    """``R(q) diag(s)^2 R(q)^T`` for scales (..., 3) and quaternions (..., 4)."""
    scales = as_tensor(scales)
    R = quat_to_rotmat(quats)
    s2 = scales * scales
    RS = R * s2.reshape(s2.shape[:-1] + (1, 3))
    return RS @ R.T


# ---------------------------------------------------------------------------
# parameter head and assembly
# ---------------------------------------------------------------------------

class GaussianHead(Module):
    """Cross-view U-Net mapping [aligned features || image] to raw per-pixel parameters."""

    def __init__(self, rng, feat_channels: int, sh_degree: int = 1, width: int = 32, levels: int = 4,
                 heads: int = 2):
        from .unet import CrossViewUNet

        self.sh_degree = sh_degree
        self.out_channels = num_param_channels(sh_degree)
        bias = np.zeros(self.out_channels)
        bias[3] = 1.0  # identity quaternion at init
        self.unet = CrossViewUNet(rng, feat_channels + 3, [width] * levels, self.out_channels,
                                  heads=heads, zero_head=True, head_bias=bias)

    def __call__(self, features, images) -> Tensor:
        """features (2,C,H,W), images (2,3,H,W) -> raw maps (2, 8+3*nb, H, W)."""
        features, images = as_tensor(features), as_tensor(images)
        if features.shape[0] != images.shape[0] or features.shape[2:] != images.shape[2:]:
            raise ValueError(f"features {features.shape} and images {images.shape} are not aligned")
        return self.unet(concat([features, Tensor(images.data.astype(features.dtype))], axis=1))


def predict_params(features, images, head: GaussianHead) -> Tensor:
    return head(features, images)


def activate(raw_view: Tensor, depth: Tensor, cam: CameraView, scene_extent: float):
    """Activated per-pixel parameters for one view; raw (8+3nb, H, W), depth (H, W)."""
    ch, h, w = raw_view.shape
    flat = raw_view.reshape(ch, h * w).T                       # (HW, ch)
    footprint = depth.reshape(h * w, 1) * (1.0 / cam.focal[0])
    scales = clamp(exp(flat[:, 0:3]) * footprint, MIN_SCALE, 0.5 * scene_extent)
    q = flat[:, 3:7]
    quats = q / sqrt((q * q).sum(axis=-1, keepdims=True) + 1e-12)
    opac = sigmoid(flat[:, 7])
    nb = (ch - GEOM_CHANNELS) // 3
    sh = flat[:, GEOM_CHANNELS:].reshape(h * w, 3, nb)
    return scales, quats, opac, sh


def assemble(depths, raw, cams: list[CameraView], scene_extent: float = 4.0) -> GaussianSet:
    """Merge per-view primitives: view 0's H*W pixels first, row-major within a view."""
    depths, raw = as_tensor(depths), as_tensor(raw)
    sets = []
    for v, cam in enumerate(cams):
        d = depths[v]
        means = unproject_depth_map(cam, d)
        scales, quats, opac, sh = activate(raw[v], d, cam, scene_extent)
        sets.append(GaussianSet(means, quats, scales, opac, sh))
    gs = GaussianSet.concat(sets)
    _check_finite(gs, depths.shape[1:])
    return gs


def _check_finite(gs: GaussianSet, hw) -> None:
    h, w = hw
    for name, arr in gs.arrays().items():
        bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            view, pix = divmod(i, h * w)
            raise FloatingPointError(
                f"non-finite {name} at view {view}, pixel (x={pix % w}, y={pix // w})")


def gaussian_colors(gs: GaussianSet, cam: CameraView) -> Tensor:
    """SH colour of each primitive as seen from ``cam``'s centre."""
    v = gs.means - Tensor(cam.center.astype(gs.means.dtype))
    dirs = v / sqrt((v * v).sum(axis=-1, keepdims=True))
    return eval_sh(gs.sh, dirs)


# ---------------------------------------------------------------------------
# PLY export
# ---------------------------------------------------------------------------

def write_ply(path, gs: GaussianSet) -> None:
    """ASCII PLY using the property names common splat viewers expect."""
    arr = gs.arrays()
    m = len(gs)
    nb = arr["sh"].shape[-1]
    means = arr["means"]
    log_scales = np.log(arr["scales"])
    a = np.clip(arr["opacities"], 1e-7, 1 - 1e-7)
    logit = np.log(a / (1 - a))
    dc = arr["sh"][:, :, 0]
    rest = arr["sh"][:, :, 1:].reshape(m, -1)  # channel-major, matching f_rest ordering
    names = (["x", "y", "z"] + [f"scale_{i}" for i in range(3)] + [f"rot_{i}" for i in range(4)]
             + ["opacity"] + [f"f_dc_{i}" for i in range(3)]
             + [f"f_rest_{i}" for i in range(3 * (nb - 1))])
    table = np.concatenate([means, log_scales, arr["quats"], logit[:, None], dc, rest], axis=1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {m}\n")
        for n in names:
            fh.write(f"property float {n}\n")
        fh.write("end_header\n")
        np.savetxt(fh, table, fmt="%.7g")


def read_ply(path) -> GaussianSet:
    lines = Path(path).read_text().splitlines()
    end = lines.index("end_header")
    names = [ln.split()[-1] for ln in lines[:end] if ln.startswith("property")]
    m = int(next(ln.split()[-1] for ln in lines if ln.startswith("element vertex")))
    data = np.loadtxt(lines[end + 1:end + 1 + m], ndmin=2).reshape(m, len(names))
    col = {n: data[:, i] for i, n in enumerate(names)}
    nrest = sum(n.startswith("f_rest_") for n in names) // 3
    sh = np.zeros((m, 3, nrest + 1))
    sh[:, :, 0] = np.stack([col[f"f_dc_{i}"] for i in range(3)], axis=1)
    if nrest:
        rest = np.stack([col[f"f_rest_{i}"] for i in range(3 * nrest)], axis=1)
        sh[:, :, 1:] = rest.reshape(m, 3, nrest)
    means = np.stack([col[k] for k in "xyz"], axis=1)
    scales = np.exp(np.stack([col[f"scale_{i}"] for i in range(3)], axis=1))
    quats = np.stack([col[f"rot_{i}"] for i in range(4)], axis=1)
    opac = 1 / (1 + np.exp(-col["opacity"]))
    return GaussianSet.from_arrays(means, quats, scales, opac, sh, dtype=np.float64)


__all__ = [
    "GaussianSet", "GaussianHead", "SH_C0", "assemble", "build_covariance", "gaussian_colors",
    "num_param_channels", "predict_params", "quat_to_rotmat", "read_ply", "write_ply",
]
