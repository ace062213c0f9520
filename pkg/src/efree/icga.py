"""Iterative cross-view alignment of per-view depths and features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraView, warp_features
from .tensorcore import (
    Conv2d, Module, ShapeError, Tensor, as_tensor, clamp, concat, gelu, log, sigmoid, stack, tanh,
)
from .unet import CrossViewUNet

GATE_TAU = 4.0
DISPARITY_EPS = 1e-4


@dataclass
class AlignState:
    depths: list[Tensor]     # per view (H, W)
    features: list[Tensor]   # per view (C, H, W)
    iteration: int = 0

    def swapped(self) -> "AlignState":
        return AlignState(self.depths[::-1], self.features[::-1], self.iteration)


@dataclass
class SimilarityPair:
    s1: Tensor  # (C, H, W), squared difference
    s2: Tensor  # (1, H, W), scaled channel dot product


# ---------------------------------------------------------------------------
# depth parameterisation
# ---------------------------------------------------------------------------

def depth_from_logits(x, near: float, far: float) -> Tensor:
    """Map logits to depth through inverse-depth space: 1/d = 1/far + s(x)(1/near - 1/far).

    s(x) is kept inside [eps, 1 - eps] so saturated logits still land strictly
    between the bounds.
    """
    s = clamp(sigmoid(x), DISPARITY_EPS, 1.0 - DISPARITY_EPS)
    disp = 1.0 / far + s * (1.0 / near - 1.0 / far)
    return 1.0 / disp


def normalized_disparity(d, near: float, far: float) -> Tensor:
    """Inverse of the sigmoid stage of ``depth_from_logits``; 0 at far, 1 at near."""
    return (1.0 / as_tensor(d) - 1.0 / far) * (1.0 / (1.0 / near - 1.0 / far))


def disparity_logit(d, near: float, far: float) -> Tensor:
    s = clamp(normalized_disparity(d, near, far), DISPARITY_EPS, 1.0 - DISPARITY_EPS)
    return log(s) - log(1.0 - s)


# ---------------------------------------------------------------------------
# components
# ---------------------------------------------------------------------------

class DepthFeatureUNet(Module):
    """Joint two-view U-Net emitting a depth logit and C feature channels per pixel.

    The input per view is the current feature map plus its normalized
    disparity; the depth head is residual on the current disparity logit.
    """

    def __init__(self, rng, channels: int = 32, ladder=(16, 16, 32, 64), heads: int = 2):
        self.channels = channels
        self.net = CrossViewUNet(rng, channels + 1, list(ladder), channels + 1, heads=heads,
                                 head_std=0.01)

    def __call__(self, feats: list[Tensor], depths: list[Tensor], near: float, far: float):
        if feats[0].shape != feats[1].shape:
            raise ShapeError(f"feature maps differ: {feats[0].shape} vs {feats[1].shape}")
        if feats[0].shape[0] != self.channels:
            raise ShapeError(f"expected {self.channels} feature channels, got {feats[0].shape[0]}")
        h, w = feats[0].shape[1:]
        disp = [normalized_disparity(d, near, far).reshape(1, h, w) for d in depths]
        x = stack([concat([f, s], axis=0) for f, s in zip(feats, disp)], axis=0)
        out = self.net(x)
        new_d, new_g = [], []
        for v in range(2):
            logit = out[v, 0] + disparity_logit(depths[v], near, far)
            new_d.append(depth_from_logits(logit, near, far))
            new_g.append(out[v, 1:])
        return new_d, new_g


def initial_depths(shape: tuple[int, int], near: float, far: float, dtype=np.float32) -> list[Tensor]:
    """Mid-disparity plane used before the first prediction."""
    d = 2.0 / (1.0 / near + 1.0 / far)
    return [Tensor(np.full(shape, d, dtype=dtype)) for _ in range(2)]


def unet_predict(f1, f2, unet: DepthFeatureUNet, near: float, far: float, depths=None):
    """(d1, G1, d2, G2) from the current feature maps and depths."""
    f1, f2 = as_tensor(f1), as_tensor(f2)
    if depths is None:
        depths = initial_depths(f1.shape[1:], near, far, f1.dtype)
    (d1, d2), (g1, g2) = unet([f1, f2], depths, near, far)
    return d1, g1, d2, g2


def similarity(g, g_warped) -> SimilarityPair:
    g, g_warped = as_tensor(g), as_tensor(g_warped)
    if g.shape != g_warped.shape:
        raise ShapeError(f"similarity inputs differ: {g.shape} vs {g_warped.shape}")
    diff = g - g_warped
    s2 = (g * g_warped).sum(axis=0, keepdims=True) * (1.0 / np.sqrt(g.shape[0]))
    return SimilarityPair(diff * diff, s2)


class Refiner(Module):
    """Two 3x3 convolutions mapping [G || S1] to a feature update; final layer starts at zero."""

    def __init__(self, rng, channels: int = 32):
        self.channels = channels
        self.conv1 = Conv2d(rng, 2 * channels, channels)
        self.conv2 = Conv2d(rng, channels, channels, zero=True)

    def __call__(self, x):
        if x.shape[0] != 2 * self.channels:
            raise ShapeError(f"refiner expects {2 * self.channels} channels, got {x.shape[0]}")
        return self.conv2(gelu(self.conv1(x)))


def update_gate(s2, tau: float | None = GATE_TAU) -> Tensor:
    """Bounded gate tanh(S2 / tau); ``tau=None`` passes S2 through unchanged."""
    s2 = as_tensor(s2)
    return s2 if tau is None else tanh(s2 * (1.0 / tau))


def refine(g, d, sim: SimilarityPair, phi: Refiner, near: float, far: float,
           tau: float | None = GATE_TAU) -> tuple[Tensor, Tensor]:
    g, d = as_tensor(g), as_tensor(d)
    gate = update_gate(sim.s2, tau)
    g_new = g + phi(concat([g, sim.s1], axis=0)) * gate
    d_new = clamp(d + d * gate[0], near, far)
    return g_new, d_new


def icga_run(f1, f2, cam1: CameraView, cam2: CameraView, unet: DepthFeatureUNet, phi: Refiner,
             iterations: int, tau: float | None = GATE_TAU) -> AlignState:
    """Predict, cross-warp, compare and refine, ``iterations`` times with shared weights."""
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    near, far = cam1.near, cam1.far
    feats = [as_tensor(f1), as_tensor(f2)]
    depths = initial_depths(feats[0].shape[1:], near, far, feats[0].dtype)
    cams = (cam1, cam2)
    for _ in range(iterations):
        depths, feats = unet(feats, depths, near, far)
        new_g, new_d = [], []
        for v in range(2):
            o = 1 - v
            warped = warp_features(feats[o], cams[v], cams[o], depths[v])
            g, d = refine(feats[v], depths[v], similarity(feats[v], warped), phi, near, far, tau)
            new_g.append(g)
            new_d.append(d)
        feats, depths = new_g, new_d
    return AlignState(depths, feats, iterations)


def predict_only(f1, f2, cam1: CameraView, unet: DepthFeatureUNet) -> AlignState:
    """Single U-Net pass with no warping or refinement (alignment bypassed)."""
    d1, g1, d2, g2 = unet_predict(f1, f2, unet, cam1.near, cam1.far)
    return AlignState([d1, d2], [g1, g2], 0)


__all__ = [
    "AlignState", "DepthFeatureUNet", "GATE_TAU", "Refiner", "SimilarityPair", "depth_from_logits",
    "icga_run", "initial_depths", "normalized_disparity", "predict_only", "refine", "similarity",
    "unet_predict", "update_gate",
]
