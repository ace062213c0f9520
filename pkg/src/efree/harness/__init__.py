"""Data generation, training, evaluation and the command-line interface."""
from .config import RunConfig
from .data import SceneSample, compute_overlap, generate, load_dataset, load_scene
from .evaluate import evaluate, render
from .metrics import depth_consistency, psnr, ssim
from .train import train

__all__ = [
    "RunConfig", "SceneSample", "compute_overlap", "depth_consistency", "evaluate", "generate",
    "load_dataset", "load_scene", "psnr", "render", "ssim", "train",
]
