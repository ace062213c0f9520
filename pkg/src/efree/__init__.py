"""Feed-forward two-view Gaussian splatting with cross-view alignment, on a numpy autograd core."""
from .gaussians import GaussianSet
from .geometry import CameraView
from .model import EFreeModel, ModelConfig

__version__ = "0.1.0"

__all__ = ["CameraView", "EFreeModel", "GaussianSet", "ModelConfig", "__version__"]
