"""sRGB <-> linear transfer functions.

The network is trained on gamma-encoded (sRGB) frames while game engines
commonly hand over linear colour buffers, so every engine-side frame and
style image must pass through :func:`linear_to_srgb` before inference.
"""

import numpy as np
import torch

SRGB_THRESHOLD = 0.04045
LINEAR_THRESHOLD = 0.0031308


def srgb_to_linear(img):
    """Decode sRGB values in [0, 1] to linear light. Inputs are clamped."""
    if not torch.is_tensor(img):
        x = np.clip(np.asarray(img, dtype=np.result_type(img, np.float32)), 0.0, 1.0)
        return np.where(
            x > SRGB_THRESHOLD,
            ((np.maximum(x, SRGB_THRESHOLD) + 0.055) / 1.055) ** 2.4,
            x / 12.92,
        )
    x = img.clamp(0.0, 1.0)
    # inner clamp keeps the unused branch finite under autograd
    return torch.where(
        x > SRGB_THRESHOLD,
        ((x.clamp(min=SRGB_THRESHOLD) + 0.055) / 1.055) ** 2.4,
        x / 12.92,
    )


def linear_to_srgb(img):
    """Encode linear values in [0, 1] to sRGB. Inputs are clamped.

    Written as ``1.055 * (y - 1) + 1`` rather than ``1.055 * y - 0.055`` so
    that 1.0 maps to exactly 1.0 in floating point.
    """
    if not torch.is_tensor(img):
        x = np.clip(np.asarray(img, dtype=np.result_type(img, np.float32)), 0.0, 1.0)
        return np.where(
            x > LINEAR_THRESHOLD,
            1.055 * (np.maximum(x, LINEAR_THRESHOLD) ** (1.0 / 2.4) - 1.0) + 1.0,
            12.92 * x,
        )
    x = img.clamp(0.0, 1.0)
    return torch.where(
        x > LINEAR_THRESHOLD,
        1.055 * (x.clamp(min=LINEAR_THRESHOLD) ** (1.0 / 2.4) - 1.0) + 1.0,
        12.92 * x,
    )
