"""Run configuration: a flat JSON object validated on load."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..icga import GATE_TAU
from ..model import ModelConfig

REFERENCE_PERCEPTUAL_W = 0.05  # weight for a real perceptual network; the slot here is a stub, so the default is 0


@dataclass
class RunConfig:
    image_size: int = 64
    patch_size: int = 8
    model_dim: int = 64
    heads: int = 4
    enc_layers: int = 4
    dec_layers: int = 4
    feature_channels: int = 32
    unet_ladder: list[int] = field(default_factory=lambda: [16, 16, 32, 64])
    head_width: int = 32
    head_levels: int = 4
    iterations: int = 2
    gate_tau: float | None = GATE_TAU
    sh_degree: int = 1
    learning_rate: float = 2e-4
    mse_w: float = 1.0
    perceptual_w: float = 0.0
    steps: int = 2000
    seed: int = 0
    near: float = 0.5
    far: float = 6.0
    scene_extent: float = 4.0
    train_views: list[int] = field(default_factory=lambda: [2, 3, 4])
    background: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    checkpoint_every: int = 500
    keep_checkpoints: int = 3
    data_dir: str = "data"
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ValueError(f"invalid config: {msg}")
        need(self.image_size > 0 and self.image_size % self.patch_size == 0,
             f"patch_size {self.patch_size} must divide image_size {self.image_size}")
        need(self.image_size % (1 << (max(len(self.unet_ladder), self.head_levels) - 1)) == 0,
             "image_size must be divisible by the U-Net downsampling factor")
        need(self.model_dim % self.heads == 0, "heads must divide model_dim")
        need((self.model_dim // self.heads) % 2 == 0, "per-head dim must be even for rotary embedding")
        need(min(self.enc_layers, self.dec_layers) >= 0, "layer counts must be non-negative")
        need(self.feature_channels > 0 and len(self.unet_ladder) >= 1, "bad channel settings")
        need(self.unet_ladder[-1] % 2 == 0, "deepest U-Net width must be divisible by 2 heads")
        need(self.iterations >= 0, "iterations must be >= 0")
        need(self.gate_tau is None or self.gate_tau > 0, "gate_tau must be positive or null")
        need(0 <= self.sh_degree <= 3, "sh_degree must be in 0..3")
        need(self.learning_rate > 0, "learning_rate must be positive")
        need(self.mse_w >= 0 and self.perceptual_w >= 0, "loss weights must be non-negative")
        need(self.steps >= 0, "steps must be >= 0")
        need(0 < self.near < self.far, "need 0 < near < far")
        need(self.scene_extent > 0, "scene_extent must be positive")
        need(len(self.train_views) > 0, "train_views must not be empty")
        need(len(self.background) == 3, "background must be an RGB triple")
        need(self.checkpoint_every > 0 and self.keep_checkpoints > 0, "checkpoint cadence must be positive")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            patch=self.patch_size, dim=self.model_dim, heads=self.heads, enc_layers=self.enc_layers,
            dec_layers=self.dec_layers, channels=self.feature_channels,
            unet_ladder=tuple(self.unet_ladder), head_width=self.head_width,
            head_levels=self.head_levels, sh_degree=self.sh_degree, iterations=self.iterations,
            gate_tau=self.gate_tau, scene_extent=self.scene_extent)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"invalid config: unknown fields {unknown}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except OSError as e:
            raise OSError(f"cannot read config {path}: {e.strerror}") from e
        return cls.from_dict(d)
