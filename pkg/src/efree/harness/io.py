"""Image and depth-map files."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    """(3,H,W) floats -> (H,W,3) bytes by clamp-and-scale, no gamma."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(x * 255.0).astype(np.uint8).transpose(1, 2, 0)


def write_png(path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def read_png(path) -> np.ndarray:
    """(3,H,W) float32 in [0,1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e
    return arr.transpose(2, 0, 1) / 255.0


def write_pfm(path, depth: np.ndarray) -> None:
    """Single-channel little-endian PFM; rows are stored bottom-up as the format requires."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = np.asarray(depth, dtype="<f4")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(d[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind != b"Pf":
            raise ValueError(f"{path}: only single-channel PFM is supported")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} floats, found {data.size}")
    return data.reshape(h, w)[::-1].astype(np.float32)
