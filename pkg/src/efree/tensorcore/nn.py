"""Parameter containers and the small layer zoo used by the pipeline."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, default_dtype


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=default_dtype()), requires_grad=True)


class Module:
    """Base class; parameters and submodules are discovered from attributes.

    Iteration order is attribute definition order, so names and checkpoint
    layout are stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, zero: bool = False):
        w = np.zeros((d_in, d_out)) if zero else trunc_normal(rng, (d_in, d_out))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(d))
        self.beta = parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 zero: bool = False, std: float | None = None):
        if zero:
            w = np.zeros((c_out, c_in, k, k))
        else:
            # He-style fan-in scaling keeps activations O(1) through deep stacks
            w = trunc_normal(rng, (c_out, c_in, k, k), std or np.sqrt(2.0 / (c_in * k * k)))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)
