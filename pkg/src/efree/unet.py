"""Two-view U-Net with attention across both views at the coarsest level."""
from __future__ import annotations

import numpy as np

from .perceiver import MultiHeadAttention
from .tensorcore import (
    Conv2d, LayerNorm, Module, ShapeError, Tensor, as_tensor, concat, gelu, parameter, resample2d,
)


class CrossViewAttention(Module):
    """Pre-LN residual attention over the flattened tokens of both views."""

    def __init__(self, rng, channels: int, heads: int):
        self.norm = LayerNorm(channels)
        self.attn = MultiHeadAttention(rng, channels, heads, rope=False)

    def __call__(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        tokens = x.transpose((0, 2, 3, 1)).reshape(n * h * w, c)
        t = self.norm(tokens)
        tokens = tokens + self.attn(t, t)
        return tokens.reshape(n, h, w, c).transpose((0, 3, 1, 2))


class CrossViewUNet(Module):
    """Encoder ladder, cross-view attention at the bottom, skip-connected decoder.

    Input and output are batched over views: (V, C, H, W).  The network is
    equivariant to permuting views because every layer is shared and the
    attention pools tokens without view labels.
    """

    def __init__(self, rng, c_in: int, channels: list[int], c_out: int, heads: int = 2,
                 zero_head: bool = False, head_bias=None, head_std: float | None = None):
        self.channels = list(channels)
        self.stem = Conv2d(rng, c_in, channels[0])
        self.down = [Conv2d(rng, channels[i - 1], channels[i]) for i in range(1, len(channels))]
        self.mid = CrossViewAttention(rng, channels[-1], heads)
        self.up = [Conv2d(rng, channels[i] + channels[i - 1], channels[i - 1])
                   for i in range(len(channels) - 1, 0, -1)]
        self.head = Conv2d(rng, channels[0], c_out, k=1, zero=zero_head, std=head_std)
        if head_bias is not None:
            self.head.bias = parameter(np.asarray(head_bias))

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4:
            raise ShapeError(f"expected (views, C, H, W), got {x.shape}")
        levels = len(self.channels) - 1
        if x.shape[2] % (1 << levels) or x.shape[3] % (1 << levels):
            raise ShapeError(f"spatial size {x.shape[2:]} not divisible by {1 << levels}")
        h = gelu(self.stem(x))
        skips = [h]
        for conv in self.down:
            h = gelu(conv(resample2d(h, "bilinear_down2")))
            skips.append(h)
        h = self.mid(h)
        for conv, skip in zip(self.up, reversed(skips[:-1])):
            h = gelu(conv(concat([resample2d(h, "bilinear_up2"), skip], axis=1)))
        return self.head(h)


__all__ = ["CrossViewAttention", "CrossViewUNet"]
