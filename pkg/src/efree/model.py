"""End-to-end two-view model: perception, alignment, Gaussian prediction and rendering."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import GaussianHead, GaussianSet, assemble
from .geometry import CameraView
from .icga import AlignState, DepthFeatureUNet, GATE_TAU, Refiner, icga_run, predict_only
from .perceiver import Perceiver
from .rasterizer import rasterize
from .tensorcore import Module, Tensor, as_tensor, stack


@dataclass
class ModelConfig:
    patch: int = 8
    dim: int = 64
    heads: int = 4
    enc_layers: int = 4
    dec_layers: int = 4
    channels: int = 32
    unet_ladder: tuple[int, ...] = (16, 16, 32, 64)
    head_width: int = 32
    head_levels: int = 4
    sh_degree: int = 1
    iterations: int = 2
    gate_tau: float | None = GATE_TAU
    scene_extent: float = 4.0


@dataclass
class Prediction:
    align: AlignState
    gaussians: GaussianSet


class EFreeModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.perceiver = Perceiver(rng, cfg.patch, cfg.dim, cfg.heads, cfg.enc_layers,
                                   cfg.dec_layers, cfg.channels)
        self.unet = DepthFeatureUNet(rng, cfg.channels, cfg.unet_ladder)
        self.phi = Refiner(rng, cfg.channels)
        self.head = GaussianHead(rng, cfg.channels, cfg.sh_degree, cfg.head_width, cfg.head_levels)

    def align(self, images, cams: list[CameraView], iterations: int | None = None) -> AlignState:
        images = as_tensor(images)
        it = self.cfg.iterations if iterations is None else iterations
        f1, f2 = self.perceiver(images[0], images[1])
        if it == 0:
            return predict_only(f1, f2, cams[0], self.unet)
        return icga_run(f1, f2, cams[0], cams[1], self.unet, self.phi, it, self.cfg.gate_tau)

    def __call__(self, images, cams: list[CameraView], iterations: int | None = None) -> Prediction:
        """images (2, 3, H, W) in [0, 1] -> aligned state and merged Gaussians."""
        images = as_tensor(images)
        state = self.align(images, cams, iterations)
        raw = self.head(stack(state.features, axis=0), images)
        gs = assemble(stack(state.depths, axis=0), raw, cams, self.cfg.scene_extent)
        return Prediction(state, gs)

    def render(self, gs: GaussianSet, cam: CameraView, background=(0.0, 0.0, 0.0)):
        return rasterize(gs, cam, background)


__all__ = ["EFreeModel", "ModelConfig", "Prediction"]
