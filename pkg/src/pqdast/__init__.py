"""Distilled, perceptual-quality-guided video style transfer."""

from .colorspace import linear_to_srgb, srgb_to_linear
from .flip import FlipParams, flip_map, flip_score
from .networks import StyleTransferModel, VGGEncoder, stylize
from .losses import LossWeights, total_loss
from .checkpoint import load_model, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "FlipParams", "LossWeights", "StyleTransferModel", "VGGEncoder",
    "flip_map", "flip_score", "linear_to_srgb", "load_model",
    "save_checkpoint", "srgb_to_linear", "stylize", "total_loss",
]
