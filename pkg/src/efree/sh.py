"""Real spherical-harmonic colour evaluation (degrees 0-3)."""
from __future__ import annotations

import numpy as np

from .tensorcore import Tensor, as_tensor, clamp, sqrt, stack

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)
COLOR_OFFSET = 0.5


def num_coeffs(degree: int) -> int:
    if not 0 <= degree <= 3:
        raise ValueError(f"SH degree must be in 0..3, got {degree}")
    return (degree + 1) ** 2


def sh_basis(dirs, degree: int) -> Tensor:
    """Basis values (..., (degree+1)^2) at unit directions (..., 3)."""
    dirs = as_tensor(dirs)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    one = Tensor(np.full(x.shape, SH_C0, dtype=dirs.dtype))
    terms = [one]
    if degree >= 1:
        terms += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        terms += [SH_C2[0] * x * y, SH_C2[1] * y * z, SH_C2[2] * (2.0 * zz - xx - yy),
                  SH_C2[3] * x * z, SH_C2[4] * (xx - yy)]
    if degree >= 3:
        terms += [SH_C3[0] * y * (3.0 * xx - yy), SH_C3[1] * x * y * z,
                  SH_C3[2] * y * (4.0 * zz - xx - yy), SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
                  SH_C3[4] * x * (4.0 * zz - xx - yy), SH_C3[5] * z * (xx - yy),
                  SH_C3[6] * x * (xx - 3.0 * yy)]
    return stack(terms, axis=-1)


def eval_sh_raw(sh, dirs) -> Tensor:
    """Offset colour before clamping: ``0.5 + sum_b sh[..., c, b] * Y_b(dir)``."""
    sh = as_tensor(sh)
    nb = sh.shape[-1]
    degree = int(round(np.sqrt(nb))) - 1
    if (degree + 1) ** 2 != nb:
        raise ValueError(f"coefficient count {nb} is not a square")
    basis = sh_basis(dirs, degree)
    return (sh * basis.reshape(basis.shape[:-1] + (1, nb))).sum(axis=-1) + COLOR_OFFSET


def eval_sh(sh, dirs) -> Tensor:
    """RGB in [0, 1] for coefficients (..., 3, nb) seen along unit ``dirs`` (..., 3)."""
    dirs = as_tensor(dirs)
    norms = np.linalg.norm(dirs.data, axis=-1)
    if np.any(norms == 0):
        raise ValueError("eval_sh needs non-zero view directions")
    return clamp(eval_sh_raw(sh, dirs), 0.0, 1.0)


def normalize(v) -> Tensor:
    v = as_tensor(v)
    n = sqrt((v * v).sum(axis=-1, keepdims=True))
    return v / n


def rgb_to_dc(rgb) -> np.ndarray:
    """Degree-0 coefficient that reproduces ``rgb`` exactly (before clamping)."""
    return (np.asarray(rgb) - COLOR_OFFSET) / SH_C0
