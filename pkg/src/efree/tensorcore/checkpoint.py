"""Directory checkpoints: ``manifest.json`` plus raw little-endian f32 ``weights.bin``."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"


def save_tensors(directory, tensors: dict[str, np.ndarray]) -> Path:
    """Write ``tensors`` in insertion order; returns the directory path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    with open(directory / WEIGHTS, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            manifest.append({"name": name, "shape": list(arr.shape), "dtype": "f32"})
            fh.write(arr.tobytes())
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return directory


def load_tensors(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    raw = (directory / WEIGHTS).read_bytes()
    out: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest:
        if entry.get("dtype") != "f32":
            raise ValueError(f"{entry['name']}: unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = 4 * n
        if offset + nbytes > len(raw):
            raise ValueError(f"{directory / WEIGHTS} truncated at tensor {entry['name']}")
        out[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{directory / WEIGHTS} has {len(raw) - offset} trailing bytes")
    return out
