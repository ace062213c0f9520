"""Synthetic orbit-camera scenes: a textured room around clusters of coloured blobs."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..gaussians import GaussianSet, read_ply, write_ply
from ..geometry import CameraView, intrinsics, look_at
from ..rasterizer import rasterize
from ..rasterizer.core import default_threads
from ..sh import SH_C0
from ..tensorcore import no_grad, precision
from .io import read_pfm, read_png, write_pfm, write_png
from .metrics import overlap_mask

ROOM_HALF = 2.0
WALL_SPACING = 0.2
ORBIT_RADIUS = 1.6
FOV_DEG = 60.0
NEAR, FAR = 0.5, 6.0
TARGET_OFFSETS = (-0.25, 0.0, 0.25)  # fractions of the baseline around the orbit midpoint
REFERENCE_IDS = (0, 1)
TARGET_IDS = (2, 3, 4)


@dataclass
class SceneSample:
    name: str
    images: np.ndarray            # (V, 3, H, W) float32; views 0 and 1 are the references
    cams: list[CameraView]
    depths: np.ndarray            # (V, H, W) ground-truth expected depth
    overlap: float
    path: Path | None = None

    @property
    def reference_ids(self) -> tuple[int, int]:
        return REFERENCE_IDS

    @property
    def target_ids(self) -> tuple[int, ...]:
        return tuple(range(2, len(self.cams)))

    def gaussians(self) -> GaussianSet:
        return read_ply(self.path / "gaussians.ply")


# ---------------------------------------------------------------------------
# scene sampling
# ---------------------------------------------------------------------------

def _random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q


def _texture(rng, pts, base):
    """Smooth stripes and blotches in world space so surfaces are matchable across views."""
    col = np.tile(base, (len(pts), 1))
    for _ in range(3):
        k = rng.normal(size=3) * rng.uniform(2.0, 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.1, 0.25, size=3) * rng.choice([-1, 1], size=3)
        col += amp * np.sin(pts @ k + phase)[:, None]
    return np.clip(col, 0.03, 0.97)


def _room(rng):
    ticks = np.arange(-ROOM_HALF, ROOM_HALF + 1e-9, WALL_SPACING)
    a, b = np.meshgrid(ticks, ticks, indexing="ij")
    a, b = a.ravel(), b.ravel()
    means, scales, quats, colors = [], [], [], []
    flat = np.array([WALL_SPACING * 0.7, WALL_SPACING * 0.7, 0.01])
    for axis in range(3):
        for sign in (-1.0, 1.0):
            p = np.zeros((a.size, 3))
            others = [i for i in range(3) if i != axis]
            p[:, others[0]], p[:, others[1]] = a, b
            p[:, axis] = sign * ROOM_HALF
            # rotate the thin axis (local z) onto the face normal
            if axis == 0:
                q = np.array([np.sqrt(0.5), 0.0, np.sqrt(0.5), 0.0])
            elif axis == 1:
                q = np.array([np.sqrt(0.5), np.sqrt(0.5), 0.0, 0.0])
            else:
                q = np.array([1.0, 0.0, 0.0, 0.0])
            means.append(p)
            quats.append(np.tile(q, (a.size, 1)))
            scales.append(np.tile(flat, (a.size, 1)))
            colors.append(_texture(rng, p, rng.uniform(0.2, 0.8, size=3)))
    n = sum(len(m) for m in means)
    return (np.concatenate(means), np.concatenate(quats), np.concatenate(scales),
            np.full(n, 0.98), np.concatenate(colors))


def _blobs(rng, count):
    n_clusters = int(rng.integers(3, 6))
    centers = rng.normal(size=(n_clusters, 3))
    centers *= (rng.uniform(0.2, 0.7, size=n_clusters) / np.linalg.norm(centers, axis=1))[:, None]
    cluster_col = rng.uniform(0.05, 0.95, size=(n_clusters, 3))
    which = rng.integers(0, n_clusters, size=count)
    means = centers[which] + rng.normal(scale=0.12, size=(count, 3))
    scales = np.exp(rng.uniform(np.log(0.03), np.log(0.12), size=(count, 3)))
    colors = np.clip(cluster_col[which] + rng.normal(scale=0.08, size=(count, 3)), 0.02, 0.98)
    return means, _random_quats(rng, count), scales, rng.uniform(0.6, 0.95, size=count), colors


def sample_gaussians(rng, count: int, sh_degree: int = 1) -> GaussianSet:
    if count < 1:
        raise ValueError(f"gaussians_per_scene must be >= 1, got {count}")
    parts = [_room(rng), _blobs(rng, count)]
    means, quats, scales, opac, colors = (np.concatenate(x) for x in zip(*parts))
    nb = (sh_degree + 1) ** 2
    sh = np.zeros((len(means), 3, nb))
    sh[:, :, 0] = (colors - 0.5) / SH_C0
    if nb > 1:
        sh[len(parts[0][0]):, :, 1:] = rng.normal(scale=0.05, size=(count, 3, nb - 1))
    return GaussianSet.from_arrays(means, quats, scales, opac, sh, dtype=np.float64)


def orbit_cameras(rng, size: int, baseline_deg: float) -> list[CameraView]:
    f = 0.5 * size / np.tan(np.radians(FOV_DEG) / 2)
    K = intrinsics(f, f, size / 2, size / 2)
    theta = rng.uniform(0, 2 * np.pi)
    height = rng.uniform(-0.2, 0.2)
    look = np.array([0.0, rng.uniform(-0.1, 0.1), 0.0])
    b = np.radians(baseline_deg)
    angles = [theta - b / 2, theta + b / 2] + [theta + o * b for o in TARGET_OFFSETS]
    cams = []
    for ang in angles:
        eye = [ORBIT_RADIUS * np.cos(ang), height, ORBIT_RADIUS * np.sin(ang)]
        cams.append(CameraView(K, look_at(eye, look), size, size, NEAR, FAR))
    return cams


def compute_overlap(cam1: CameraView, cam2: CameraView, gt_depth1) -> float:
    """Share of view-1 pixels whose ground-truth point projects inside view 2 in front of it."""
    return float(overlap_mask(cam1, cam2, np.asarray(gt_depth1, dtype=np.float64)).mean())


def render_views(gs: GaussianSet, cams: list[CameraView]):
    images, depths = [], []
    with precision(np.float64), no_grad():
        for cam in cams:
            img, dep, _ = rasterize(gs, cam)
            images.append(img.data)
            depths.append(dep.data)
    return np.stack(images), np.stack(depths)


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def _write_scene(root: Path, seed: int, index: int, gaussians: int, size: int,
                 baseline_deg: float, baseline_max: float | None) -> dict:
    rng = np.random.default_rng([seed, index])
    base = baseline_deg if baseline_max is None else rng.uniform(baseline_deg, baseline_max)
    name = f"scene_{index:04d}"
    d = root / name
    d.mkdir(parents=True, exist_ok=True)
    # the stored PLY is the canonical scene: render from what a reader gets back
    write_ply(d / "gaussians.ply", sample_gaussians(rng, gaussians))
    gs = read_ply(d / "gaussians.ply")
    cams = orbit_cameras(rng, size, base)
    images, depths = render_views(gs, cams)
    for v, cam in enumerate(cams):
        write_png(d / f"view_{v}.png", images[v])
        write_pfm(d / f"depth_{v}.pfm", depths[v])
        cam.save(d / f"camera_{v}.json")
    overlap = compute_overlap(cams[0], cams[1], depths[0])
    meta = {"name": name, "seed": seed, "index": index, "baseline_deg": round(float(base), 6),
            "overlap": round(overlap, 6), "num_gaussians": len(gs),
            "reference_views": list(REFERENCE_IDS), "target_views": list(TARGET_IDS)}
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return meta


def generate(out_dir, seed: int = 0, num_scenes: int = 1, gaussians_per_scene: int = 200,
             image_size: int = 64, baseline_deg: float = 15.0,
             baseline_max: float | None = None) -> Path:
    """Write ``num_scenes`` scenes; identical arguments give byte-identical output."""
    if gaussians_per_scene < 1:
        raise ValueError(f"gaussians_per_scene must be >= 1, got {gaussians_per_scene}")
    if num_scenes < 1:
        raise ValueError(f"num_scenes must be >= 1, got {num_scenes}")
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {root}: {e.strerror}") from e
    workers = min(default_threads(), num_scenes)
    args = [(root, seed, i, gaussians_per_scene, image_size, baseline_deg, baseline_max)
            for i in range(num_scenes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        metas = list(pool.map(lambda a: _write_scene(*a), args))
    index = {"seed": seed, "image_size": image_size, "gaussians_per_scene": gaussians_per_scene,
             "baseline_deg": baseline_deg, "baseline_max": baseline_max,
             "scenes": [m["name"] for m in metas]}
    (root / "dataset.json").write_text(json.dumps(index, indent=2) + "\n")
    return root


def load_scene(path) -> SceneSample:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no scene at {path} (missing meta.json)")
    meta = json.loads(meta_path.read_text())
    n = len(meta["reference_views"]) + len(meta["target_views"])
    cams = [CameraView.load(path / f"camera_{v}.json") for v in range(n)]
    images = np.stack([read_png(path / f"view_{v}.png") for v in range(n)])
    depths = np.stack([read_pfm(path / f"depth_{v}.pfm") for v in range(n)])
    return SceneSample(meta["name"], images, cams, depths, float(meta["overlap"]), path)


def load_dataset(root) -> list[SceneSample]:
    root = Path(root)
    index_path = root / "dataset.json"
    if not index_path.exists():
        raise FileNotFoundError(f"no dataset at {root} (missing dataset.json)")
    names = json.loads(index_path.read_text())["scenes"]
    if not names:
        raise ValueError(f"dataset {root} is empty")
    return [load_scene(root / n) for n in names]
