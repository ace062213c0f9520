"""Epipolar-free cross-view perception: ViT encoder and two-view cross-attention decoder."""
from __future__ import annotations

import numpy as np

from .tensorcore import (
    LayerNorm, Linear, Module, ShapeError, Tensor, as_tensor, gelu, make_op, softmax,
)

ROPE_BASE = 100.0


# ---------------------------------------------------------------------------
# tokens
# ---------------------------------------------------------------------------

def patch_grid(h: int, w: int, p: int) -> tuple[int, int]:
    if h % p or w % p:
        raise ShapeError(f"patch size {p} does not divide image size {h}x{w}")
    return h // p, w // p


def grid_positions(rows: int, cols: int) -> np.ndarray:
    """Integer (row, col) per token, row-major."""
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.stack([r, c], axis=1)


def patchify_pixels(image, p: int) -> Tensor:
    """(3,H,W) -> (n, 3*p*p) raw patch vectors in row-major patch order."""
    image = as_tensor(image)
    c, h, w = image.shape
    gh, gw = patch_grid(h, w, p)
    x = image.reshape(c, gh, p, gw, p).transpose((1, 3, 0, 2, 4))
    return x.reshape(gh * gw, c * p * p)


def unflatten(tokens, grid: tuple[int, int], p: int) -> Tensor:
    """Inverse layout of ``patchify_pixels``: (n, C*p*p) -> (C, H, W)."""
    tokens = as_tensor(tokens)
    gh, gw = grid
    c = tokens.shape[1] // (p * p)
    x = tokens.reshape(gh, gw, c, p, p).transpose((2, 0, 3, 1, 4))
    return x.reshape(c, gh * p, gw * p)


# ---------------------------------------------------------------------------
# rotary embedding
# ---------------------------------------------------------------------------

def _rope_angles(positions: np.ndarray, d_head: int, base: float) -> np.ndarray:
    """Per-token angle for each 2-dim pair: rows drive the first half, cols the second."""
    if d_head % 2:
        raise ValueError(f"rotary embedding needs an even head dim, got {d_head}")
    pos = np.asarray(positions, dtype=np.float64)
    pairs = d_head // 2
    n_row = pairs // 2
    n_col = pairs - n_row
    def freqs(k):
        return base ** (-np.arange(k) / max(k, 1))
    return np.concatenate([pos[:, :1] * freqs(n_row)[None], pos[:, 1:2] * freqs(n_col)[None]], axis=1)


def _rotate_pairs(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x0 * cos - x1 * sin
    out[..., 1::2] = x0 * sin + x1 * cos
    return out


def rope_embed(x, positions, base: float = ROPE_BASE) -> Tensor:
    """Rotate adjacent feature pairs of ``x`` (..., n, d_head) by 2D token positions."""
    x = as_tensor(x)
    ang = _rope_angles(positions, x.shape[-1], base)
    cos, sin = np.cos(ang).astype(x.dtype), np.sin(ang).astype(x.dtype)
    out = _rotate_pairs(x.data, cos, sin)

    def backward(g):
        return (_rotate_pairs(g, cos, -sin),)

    return make_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

class MultiHeadAttention(Module):
    def __init__(self, rng, dim: int, heads: int, rope: bool = True, zero_out: bool = True):
        if dim % heads:
            raise ValueError(f"{heads} heads do not divide model dim {dim}")
        self.heads = heads
        self.rope = rope
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.out = Linear(rng, dim, dim, zero=zero_out)

    def _split(self, x: Tensor) -> Tensor:
        n, d = x.shape
        return x.reshape(n, self.heads, d // self.heads).transpose((1, 0, 2))

    def __call__(self, xq, xkv, pos_q=None, pos_kv=None) -> Tensor:
        xq, xkv = as_tensor(xq), as_tensor(xkv)
        if xq.shape[-1] != xkv.shape[-1]:
            raise ShapeError(f"query dim {xq.shape[-1]} != key dim {xkv.shape[-1]}")
        q, k, v = self._split(self.q(xq)), self._split(self.k(xkv)), self._split(self.v(xkv))
        if self.rope:
            q, k = rope_embed(q, pos_q), rope_embed(k, pos_kv)
        d_head = q.shape[-1]
        att = softmax((q @ k.transpose((0, 2, 1))) * (1.0 / np.sqrt(d_head)), axis=-1)
        y = (att @ v).transpose((1, 0, 2)).reshape(xq.shape[0], xq.shape[1])
        return self.out(y)


class MLP(Module):
    def __init__(self, rng, dim: int, ratio: int = 4):
        self.fc1 = Linear(rng, dim, dim * ratio)
        self.fc2 = Linear(rng, dim * ratio, dim, zero=True)

    def __call__(self, x):
        return self.fc2(gelu(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-LN self-attention and MLP, both residual."""

    def __init__(self, rng, dim: int, heads: int):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(rng, dim)

    def __call__(self, x, pos):
        h = self.norm1(x)
        x = x + self.attn(h, h, pos, pos)
        return x + self.mlp(self.norm2(x))


class CrossBlock(Module):
    """Self-attention, cross-attention to the other view, MLP; one weight set for both views."""

    def __init__(self, rng, dim: int, heads: int):
        self.norm1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(rng, dim, heads)
        self.norm3 = LayerNorm(dim)
        self.mlp = MLP(rng, dim)

    def __call__(self, ea, eb, pos_a, pos_b):
        ea, eb = as_tensor(ea), as_tensor(eb)
        if ea.shape[-1] != eb.shape[-1]:
            raise ShapeError(f"token dims differ: {ea.shape} vs {eb.shape}")
        na, nb = self.norm1(ea), self.norm1(eb)
        ea1 = ea + self.self_attn(na, na, pos_a, pos_a)
        eb1 = eb + self.self_attn(nb, nb, pos_b, pos_b)
        ea2 = ea1 + self.cross_attn(self.norm2(ea1), nb, pos_a, pos_b)
        eb2 = eb1 + self.cross_attn(self.norm2(eb1), na, pos_b, pos_a)
        return ea2 + self.mlp(self.norm3(ea2)), eb2 + self.mlp(self.norm3(eb2))


# ---------------------------------------------------------------------------
# full perceiver
# ---------------------------------------------------------------------------

class Perceiver(Module):
    """Shared-weight encoder, cross-view decoder and per-token feature head."""

    def __init__(self, rng, patch: int = 8, dim: int = 64, heads: int = 4, enc_layers: int = 4,
                 dec_layers: int = 4, out_channels: int = 32):
        self.patch = patch
        self.out_channels = out_channels
        self.embed = Linear(rng, 3 * patch * patch, dim)
        self.encoder = [EncoderBlock(rng, dim, heads) for _ in range(enc_layers)]
        self.enc_norm = LayerNorm(dim)
        self.decoder = [CrossBlock(rng, dim, heads) for _ in range(dec_layers)]
        self.dec_norm = LayerNorm(dim)
        self.head = Linear(rng, dim, out_channels * patch * patch)

    def patchify(self, image) -> tuple[Tensor, np.ndarray, tuple[int, int]]:
        image = as_tensor(image)
        grid = patch_grid(image.shape[1], image.shape[2], self.patch)
        tokens = self.embed(patchify_pixels(image, self.patch))
        return tokens, grid_positions(*grid), grid

    def encode(self, image) -> tuple[Tensor, np.ndarray, tuple[int, int]]:
        x, pos, grid = self.patchify(image)
        for blk in self.encoder:
            x = blk(x, pos)
        return self.enc_norm(x), pos, grid

    def decode_features(self, e1, e2, pos1, pos2, grid1, grid2) -> tuple[Tensor, Tensor]:
        if tuple(grid1) != tuple(grid2):
            raise ShapeError(f"token grids differ: {grid1} vs {grid2}")
        for blk in self.decoder:
            e1, e2 = blk(e1, e2, pos1, pos2)
        f1 = unflatten(self.head(self.dec_norm(e1)), grid1, self.patch)
        f2 = unflatten(self.head(self.dec_norm(e2)), grid2, self.patch)
        return f1, f2

    def __call__(self, img1, img2) -> tuple[Tensor, Tensor]:
        e1, p1, g1 = self.encode(img1)
        e2, p2, g2 = self.encode(img2)
        return self.decode_features(e1, e2, p1, p2, g1, g2)


__all__ = [
    "CrossBlock", "EncoderBlock", "MLP", "MultiHeadAttention", "Perceiver", "ROPE_BASE",
    "grid_positions", "patch_grid", "patchify_pixels", "rope_embed", "unflatten",
]
