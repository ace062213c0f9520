"""Pinhole cameras, pixel rays, projection and plane-induced homographies.

Conventions: ``P`` is camera-to-world, camera axes are x right, y down,
z forward; depth means camera-frame z; pixel ``(i, j)`` has its centre at
``(i + 0.5, j + 0.5)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorcore import Tensor, as_tensor, clamp, grid_sample, stack
from .tensorcore.tensor import ShapeError

FRONTO_PARALLEL = np.array([0.0, 0.0, 1.0])


@dataclass
class CameraView:
    K: np.ndarray
    P: np.ndarray
    width: int
    height: int
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64)
        self.P = np.asarray(self.P, dtype=np.float64)
        self.width = int(self.width)
        self.height = int(self.height)
        self.near = float(self.near)
        self.far = float(self.far)

    @property
    def R(self) -> np.ndarray:
        return self.P[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.P[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return self.P[:3, 3]

    @property
    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.K)

    @property
    def focal(self) -> tuple[float, float]:
        return float(self.K[0, 0]), float(self.K[1, 1])

    def validate(self, tol: float = 1e-6) -> None:
        R = self.R
        if np.abs(R.T @ R - np.eye(3)).max() >= tol or abs(np.linalg.det(R) - 1.0) >= tol:
            raise ValueError("pose rotation is not a proper orthonormal matrix")
        K = self.K
        if K[1, 0] or K[2, 0] or K[2, 1] or K[2, 2] != 1.0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("intrinsics must be upper-triangular with K[2,2]=1 and positive focals")
        if not 0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got near={self.near} far={self.far}")

    def to_dict(self) -> dict:
        return {"K": self.K.tolist(), "P": self.P.tolist(), "width": self.width,
                "height": self.height, "near": self.near, "far": self.far}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraView":
        return cls(np.array(d["K"]), np.array(d["P"]), d["width"], d["height"], d["near"], d["far"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "CameraView":
        return cls.from_dict(json.loads(Path(path).read_text()))


def intrinsics(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """Camera-to-world pose at ``eye`` looking toward ``target``.

    ``up`` is the world direction that should appear at the top of the image;
    with y-down camera axes it maps to camera -y.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-9:
        raise ValueError("up vector is parallel to the viewing direction")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    P = np.eye(4)
    P[:3, 0], P[:3, 1], P[:3, 2], P[:3, 3] = x, y, z, eye
    return P


def pixel_centers(width: int, height: int) -> np.ndarray:
    """Pixel-centre coordinates, shape (H, W, 2) ordered (x, y)."""
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


@dataclass
class PixelRay:
    origin: np.ndarray
    direction: np.ndarray


def _homog(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return np.concatenate([u, np.ones(u.shape[:-1] + (1,))], axis=-1)


def ray_for_pixel(cam: CameraView, u) -> PixelRay:
    """Ray through pixel ``u``; the direction has camera-frame z equal to 1."""
    d_cam = _homog(u) @ cam.K_inv.T
    return PixelRay(cam.t.copy(), d_cam @ cam.R.T)


def unproject(cam: CameraView, u, d) -> np.ndarray:
    """World point at z-depth ``d`` along pixel ``u``'s ray."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("unproject needs positive depth")
    ray = ray_for_pixel(cam, u)
    return ray.origin + d[..., None] * ray.direction


def project(cam: CameraView, X):
    """Returns ``(u, z, valid)``; ``valid`` is False at or behind the camera plane."""
    X = np.asarray(X, dtype=np.float64)
    Xc = (X - cam.t) @ cam.R
    z = Xc[..., 2]
    valid = z > 1e-9
    zs = np.where(np.abs(z) < 1e-12, 1e-12, z)
    uh = (Xc / zs[..., None]) @ cam.K.T
    return uh[..., :2], z, valid


def world_to_camera(cam: CameraView, X) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - cam.t) @ cam.R


def homography(cam1: CameraView, cam2: CameraView, d, n=FRONTO_PARALLEL) -> np.ndarray:
    """Plane-induced warp from view 1 pixels to view 2 pixels (homogeneous, un-normalised).

    The plane is ``n . X1 = d`` in view-1 camera coordinates.  With rotations
    taken world-to-camera (``R_i = P_i[:3,:3]^T``) and ``R_i^{-1} t_i`` equal
    to the camera centre, this is
    ``K2 R2 (R1^{-1} - (R2^{-1} t2 - R1^{-1} t1) n^T / d) K1^{-1}``.
    ``d`` may be a scalar or an array; the result then has shape ``d.shape + (3, 3)``.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("homography needs positive depth")
    n = np.asarray(n, dtype=np.float64)
    R1_wc, R2_wc = cam1.R.T, cam2.R.T
    baseline = cam2.center - cam1.center
    base = R1_wc.T  # R1^{-1}
    plane = np.multiply.outer(1.0 / d, np.outer(baseline, n))
    return cam2.K @ R2_wc @ (base - plane) @ cam1.K_inv


def warp_coordinates(cam1: CameraView, cam2: CameraView, depth1, n=FRONTO_PARALLEL) -> Tensor:
    """Continuous view-2 pixel coordinates (2,H,W) of every view-1 pixel centre.

    Differentiable with respect to the depth map.  Equivalent to applying
    ``homography(cam1, cam2, depth1[v, u])`` to each pixel followed by the
    perspective division.
    """
    depth1 = as_tensor(depth1)
    h, w = depth1.shape
    u = _homog(pixel_centers(w, h))                        # (H,W,3)
    R2_wc = cam2.R.T
    A = cam2.K @ R2_wc @ cam1.R @ cam1.K_inv
    b = -(cam2.K @ R2_wc @ (cam2.center - cam1.center))
    s = u @ (cam1.K_inv.T @ np.asarray(n, dtype=np.float64))  # n . K1^-1 u
    dt = depth1.dtype
    inv_d = 1.0 / depth1
    rows = []
    for k in range(3):
        rows.append(Tensor((u @ A[k]).astype(dt)) + inv_d * Tensor((b[k] * s).astype(dt)))
    zh = clamp(rows[2], 1e-6, None)
    return stack([rows[0] / zh, rows[1] / zh], axis=0)


def warp_features(G2, cam1: CameraView, cam2: CameraView, depth1, n=FRONTO_PARALLEL) -> Tensor:
    """Sample view-2 features at the warped location of every view-1 pixel."""
    G2, depth1 = as_tensor(G2), as_tensor(depth1)
    if G2.shape[1:] != depth1.shape:
        raise ShapeError(f"feature map {G2.shape} and depth map {depth1.shape} disagree")
    coords = warp_coordinates(cam1, cam2, depth1, n)
    return grid_sample(G2, coords - 0.5)


def unproject_depth_map(cam: CameraView, depth) -> Tensor:
    """Differentiable world points (H*W, 3) for a depth map, row-major pixel order."""
    depth = as_tensor(depth)
    h, w = depth.shape
    dirs = ray_for_pixel(cam, pixel_centers(w, h)).direction.reshape(-1, 3)
    d = depth.reshape(h * w, 1)
    return Tensor(cam.t[None].astype(depth.dtype)) + d * Tensor(dirs.astype(depth.dtype))
