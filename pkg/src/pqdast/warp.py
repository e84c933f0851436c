"""Flow-based warping shared by the temporal loss and the warping error.

Flow follows the dataset convention: ``flow[:, :, y, x] = (u, v)`` moves the
pixel at ``(x, y)`` in frame t-1 to ``(x + u, y + v)`` in frame t. Sampling
frame t at those positions therefore yields an image aligned with frame t-1.
"""

import torch


def _positions(flow):
    _, _, h, w = flow.shape
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=flow.dtype, device=flow.device),
        torch.arange(w, dtype=flow.dtype, device=flow.device),
        indexing="ij",
    )
    px = xs + flow[:, 0]
    py = ys + flow[:, 1]
    tol = 1e-4
    inside = (px >= -tol) & (px <= w - 1 + tol) & (py >= -tol) & (py <= h - 1 + tol)
    return px, py, inside


def warp_to_previous(frame, flow):
    """Bilinearly sample ``frame`` (N,C,H,W) at ``pixel + flow`` (N,2,H,W).

    Coordinates are clamped to the border. Integer flow reproduces pixels
    exactly. Returns the warped image and a boolean (N,H,W) mask of samples
    that landed inside the frame.
    """
    if frame.shape[0] != flow.shape[0] or frame.shape[-2:] != flow.shape[-2:]:
        raise ValueError(
            f"flow {tuple(flow.shape)} does not match frame {tuple(frame.shape)}"
        )
    n, c, h, w = frame.shape
    px, py, inside = _positions(flow.to(frame.dtype))
    px = px.clamp(0, w - 1)
    py = py.clamp(0, h - 1)
    x0 = px.detach().floor().long()
    y0 = py.detach().floor().long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    wx = (px - x0).unsqueeze(1)
    wy = (py - y0).unsqueeze(1)
    flat = frame.reshape(n, c, h * w)

    def gather(yy, xx):
        idx = (yy * w + xx).view(n, 1, h * w).expand(n, c, h * w)
        return flat.gather(2, idx).view(n, c, h, w)

    top = (1 - wx) * gather(y0, x0) + wx * gather(y0, x1)
    bottom = (1 - wx) * gather(y1, x0) + wx * gather(y1, x1)
    return (1 - wy) * top + wy * bottom, inside


def valid_mask(flow, occlusion=None):
    """Pixels that are neither occluded nor warped out of frame, as (N,H,W)."""
    _, _, inside = _positions(flow)
    if occlusion is None:
        return inside
    return inside & ~occlusion.reshape(inside.shape).bool()
