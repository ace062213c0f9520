"""Central-difference gradient verification in double precision."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad, precision


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               floor: float = 1e-4) -> float:
    """Worst error between analytic and numerical gradients of scalar ``fn``.

    Each entry contributes ``|a - n| / max(|a|, |n|, floor)``: a relative
    error, except that gradients smaller than ``floor`` are measured against
    ``floor`` so finite-difference noise on near-zero entries does not count.
    Inputs are promoted to float64 in place; only those with
    ``requires_grad`` are perturbed.
    """
    for t in inputs:
        t.data = t.data.astype(np.float64)
        t.grad = None
    with precision(np.float64):
        out = fn(*inputs)
        if out.size != 1 or not np.isfinite(out.data).all():
            raise ValueError(f"grad_check needs a finite scalar output, got {out.data!r}")
        out.backward()
        worst = 0.0
        for t in inputs:
            if not t.requires_grad:
                continue
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                with no_grad():
                    flat[i] = orig + eps
                    fp = fn(*inputs).item()
                    flat[i] = orig - eps
                    fm = fn(*inputs).item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                a = analytic.reshape(-1)[i]
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
            t.grad = None
    return worst
