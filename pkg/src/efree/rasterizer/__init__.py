"""Differentiable tile-based Gaussian splatting.

The compositing kernel comes from the compiled extension when it is
importable and from the numpy backend otherwise.  Set ``EFREE_PURE_PYTHON=1``
to force the numpy backend.
"""
from __future__ import annotations

import os

from . import _composite_py

BACKEND = "python"
_kernels = _composite_py
if not os.environ.get("EFREE_PURE_PYTHON"):
    try:
        from . import _composite_ext as _kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _kernels = _composite_py

from .core import (  # noqa: E402
    ALPHA_MAX,
    LOWPASS,
    SplatFragment,
    composite,
    get_backend,
    project_gaussian,
    project_gaussians,
    rasterize,
    set_backend,
)

__all__ = [
    "ALPHA_MAX", "BACKEND", "LOWPASS", "SplatFragment", "composite", "get_backend",
    "project_gaussian", "project_gaussians", "rasterize", "set_backend",
]
