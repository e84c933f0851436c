"""Procedural miniature video/style datasets with exact ground-truth flow.

Each scene is a textured background translating by an integer velocity with
a textured square sliding over it at a different integer velocity. Because
every motion is an integer translation, flow is exact and occlusion is known
analytically: a background pixel is occluded when its destination lies under
the square in the next frame, and any pixel whose destination leaves the
frame is occluded as well.
"""

from pathlib import Path

import numpy as np

from .data import write_flow, write_image
from PIL import Image


def _texture(x, y, phase):
    r = 0.5 + 0.4 * np.sin(0.21 * x + 0.13 * y + phase)
    g = 0.5 + 0.4 * np.sin(0.17 * x - 0.23 * y + 2 * phase)
    b = 0.5 + 0.4 * np.cos(0.11 * x + 0.29 * y - phase) * np.sin(0.07 * y)
    return np.stack((r, g, b))


def render_scene(n_frames, height, width, bg_velocity, square_velocity,
                 square_origin, square_size, phase=0.0):
    """Frames (3,H,W), flows (2,H,W) and occlusion masks (H,W) of one scene.

    Flows and masks are given for frames 0..n-2 (frame i -> i+1).
    """
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    bu, bv = bg_velocity
    qu, qv = square_velocity
    sx, sy = square_origin

    def square_mask(k):
        x0, y0 = sx + k * qu, sy + k * qv
        return (xs >= x0) & (xs < x0 + square_size) & (ys >= y0) & (ys < y0 + square_size)

    frames, flows, occlusions = [], [], []
    for k in range(n_frames):
        img = _texture(xs - k * bu, ys - k * bv, phase)
        sq = square_mask(k)
        fg = _texture(3 * (xs - sx - k * qu), 3 * (ys - sy - k * qv), phase + 1.7)[::-1]
        img = np.where(sq, 0.15 + 0.7 * fg, img)
        frames.append(np.clip(img, 0, 1).astype(np.float32))
        if k == n_frames - 1:
            break
        u = np.where(sq, qu, bu).astype(np.float32)
        v = np.where(sq, qv, bv).astype(np.float32)
        dx, dy = xs + u, ys + v
        outside = (dx < 0) | (dx > width - 1) | (dy < 0) | (dy > height - 1)
        nxt = square_mask(k + 1)
        xi = np.clip(dx, 0, width - 1).astype(int)
        yi = np.clip(dy, 0, height - 1).astype(int)
        covered = ~sq & nxt[yi, xi]
        flows.append(np.stack((u, v)))
        occlusions.append(outside | covered)
    return frames, flows, occlusions


def final_pass(img):
    """Photometric variant of a clean frame: gamma, vignette and mild haze."""
    _, h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    r2 = ((xs - w / 2) / w) ** 2 + ((ys - h / 2) / h) ** 2
    vignette = 1.0 - 0.6 * r2
    return np.clip(0.9 * img**1.2 * vignette + 0.05, 0, 1).astype(np.float32)


SCENES = (
    # name, bg velocity, square velocity, square origin, square size, phase
    ("alley", (1, 0), (3, 1), (8, 10), 16, 0.0),
    ("market", (0, -1), (-2, 2), (50, 6), 20, 0.9),
)


def write_video_fixture(root, n_frames=4, height=64, width=80):
    """Write a Sintel-layout dataset with the scenes in :data:`SCENES`."""
    root = Path(root)
    for name, bg, sqv, origin, size, phase in SCENES:
        frames, flows, occs = render_scene(n_frames, height, width, bg, sqv, origin, size, phase)
        for sub in ("clean", "final", "flow", "occlusions"):
            (root / sub / name).mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(frames, start=1):
            write_image(root / "clean" / name / f"frame_{i:04d}.png", frame)
            write_image(root / "final" / name / f"frame_{i:04d}.png", final_pass(frame))
        for i, (flow, occ) in enumerate(zip(flows, occs), start=1):
            write_flow(root / "flow" / name / f"frame_{i:04d}.flo", flow)
            Image.fromarray(occ.astype(np.uint8) * 255).save(root / "occlusions" / name / f"frame_{i:04d}.png")
    return root


def style_image(kind, height, width, seed):
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    if kind == "stripes":
        base = 0.5 + 0.5 * np.sin(0.6 * xs + 0.3 * ys)
        img = np.stack((base, 0.3 * base + 0.2, 1 - base))
    elif kind == "checker":
        c = ((xs // 8 + ys // 8) % 2).astype(np.float64)
        img = np.stack((0.9 * c + 0.05, 0.6 * c + 0.2, 0.2 + 0.1 * c))
    else:
        blobs = np.zeros((3, height, width))
        for _ in range(12):
            cx, cy = rng.uniform(0, width), rng.uniform(0, height)
            rad = rng.uniform(4, 14)
            col = rng.uniform(0, 1, size=3)
            g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * rad**2))
            blobs += col[:, None, None] * g
        img = blobs / max(blobs.max(), 1e-6)
    return np.clip(img, 0, 1).astype(np.float32)


def write_style_fixture(root):
    root = Path(root)
    (root / "abstract").mkdir(parents=True, exist_ok=True)
    write_image(root / "stripes.png", style_image("stripes", 72, 72, 0))
    write_image(root / "checker.png", style_image("checker", 64, 96, 1))
    write_image(root / "abstract" / "blobs.png", style_image("blobs", 80, 80, 2))
    return root
