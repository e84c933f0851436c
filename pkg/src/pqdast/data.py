"""Video/style dataset ingestion and training batch assembly.

Video layout (MPI Sintel training split)::

    root/[training/]clean/<scene>/frame_0001.png ...
    root/[training/]final/<scene>/frame_0001.png ...
    root/[training/]flow/<scene>/frame_0001.flo        frame i -> i+1
    root/[training/]occlusions/<scene>/frame_0001.png  255 = occluded in i+1

Flow and occlusions are shared by both passes. Style images may sit in any
folder tree; they are indexed in lexicographic order of their relative path.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

log = logging.getLogger(__name__)

PASSES = ("clean", "final")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}
FLOW_MAGIC = 202021.25


class DatasetError(ValueError):
    pass


class FlowFormatError(ValueError):
    pass


def read_image(path):
    """Decode an image file to a float32 (3, H, W) array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def write_image(path, img):
    """Write a (3, H, W) array or tensor in [0, 1] as an 8-bit image."""
    if torch.is_tensor(img):
        img = img.detach().cpu().numpy()
    arr = np.clip(np.round(np.asarray(img).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_flow(path):
    """Read a Middlebury ``.flo`` file into a float32 (2, H, W) array."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FlowFormatError(f"{path}: truncated header")
    magic = np.frombuffer(data, "<f4", 1, 0)[0]
    if magic != np.float32(FLOW_MAGIC):
        raise FlowFormatError(f"{path}: bad magic number {magic}")
    w, h = (int(v) for v in np.frombuffer(data, "<i4", 2, 4))
    if w <= 0 or h <= 0 or w > 1 << 15 or h > 1 << 15:
        raise FlowFormatError(f"{path}: implausible size {w}x{h}")
    if len(data) != 12 + 8 * w * h:
        raise FlowFormatError(f"{path}: expected {12 + 8 * w * h} bytes, found {len(data)}")
    uv = np.frombuffer(data, "<f4", 2 * w * h, 12).reshape(h, w, 2)
    return uv.transpose(2, 0, 1).astype(np.float32)


def write_flow(path, flow):
    """Write a (2, H, W) flow field in Middlebury format."""
    flow = np.asarray(flow, dtype="<f4")
    _, h, w = flow.shape
    with open(path, "wb") as f:
        f.write(np.array([FLOW_MAGIC], "<f4").tobytes())
        f.write(np.array([w, h], "<i4").tobytes())
        f.write(np.ascontiguousarray(flow.transpose(1, 2, 0)).tobytes())


def load_occlusion(path):
    """Read an 8-bit occlusion PNG as a boolean (H, W) mask (True = occluded)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


@dataclass(frozen=True)
class PairRecord:
    pass_name: str
    scene: str
    index: int
    prev_path: Path
    curr_path: Path
    flow_path: Path
    occlusion_path: Path


@dataclass
class FramePair:
    frame_prev: np.ndarray
    frame_curr: np.ndarray
    flow: np.ndarray
    occlusion: np.ndarray
    pass_name: str
    scene: str
    index: int


def load_pair(rec):
    pair = FramePair(
        read_image(rec.prev_path), read_image(rec.curr_path),
        load_flow(rec.flow_path), load_occlusion(rec.occlusion_path),
        rec.pass_name, rec.scene, rec.index,
    )
    shapes = {pair.frame_prev.shape[1:], pair.frame_curr.shape[1:], pair.flow.shape[1:], pair.occlusion.shape}
    if len(shapes) != 1:
        raise DatasetError(f"{rec.scene}/{rec.index}: frame, flow and occlusion sizes differ")
    return pair


def _images_in(folder):
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def scan_video_dataset(root):
    """Index every consecutive frame pair of both passes, in a fixed order."""
    root = Path(root)
    if (root / "training").is_dir():
        root = root / "training"
    for sub in PASSES + ("flow", "occlusions"):
        if not (root / sub).is_dir():
            raise DatasetError(f"{root}: missing '{sub}' directory")
    pairs = []
    for pass_name in PASSES:
        for scene_dir in sorted(p for p in (root / pass_name).iterdir() if p.is_dir()):
            frames = _images_in(scene_dir)
            if len(frames) < 2:
                log.warning("skipping %s/%s: fewer than 2 frames", pass_name, scene_dir.name)
                continue
            for i, (prev, curr) in enumerate(zip(frames, frames[1:])):
                flow = root / "flow" / scene_dir.name / (prev.stem + ".flo")
                occ = root / "occlusions" / scene_dir.name / (prev.stem + ".png")
                if not flow.is_file() or not occ.is_file():
                    log.warning("skipping %s/%s/%s: no flow or occlusion", pass_name, scene_dir.name, prev.name)
                    continue
                pairs.append(PairRecord(pass_name, scene_dir.name, i, prev, curr, flow, occ))
    if not pairs:
        raise DatasetError(f"{root}: no usable frame pairs")
    return pairs


def scan_style_dataset(root):
    """Decodable images under ``root``, ordered by relative path."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    found = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            log.warning("skipping non-image file %s", path)
            continue
        try:
            with Image.open(path) as im:
                im.verify()
        except Exception:
            log.warning("skipping undecodable image %s", path)
            continue
        found.append(path)
    found.sort(key=lambda p: p.relative_to(root).as_posix())
    if not found:
        raise DatasetError(f"{root}: no style images")
    return found


def resize_cover(img, size):
    """Resize a (C,H,W) tensor so its shorter side is ``size``, then centre-crop."""
    h, w = img.shape[-2:]
    scale = size / min(h, w)
    nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
    out = F.interpolate(img[None], size=(nh, nw), mode="bilinear", align_corners=False, antialias=True)[0]
    top, left = (nh - size) // 2, (nw - size) // 2
    return out[:, top : top + size, left : left + size]


def resize_flow_cover(flow, size):
    """Like :func:`resize_cover` for a (2,H,W) flow; vectors are rescaled."""
    h, w = flow.shape[-2:]
    scale = size / min(h, w)
    nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
    out = F.interpolate(flow[None], size=(nh, nw), mode="bilinear", align_corners=False)[0]
    out = out * torch.tensor([nw / w, nh / h], dtype=out.dtype).view(2, 1, 1)
    top, left = (nh - size) // 2, (nw - size) // 2
    return out[:, top : top + size, left : left + size]


def resize_mask_cover(mask, size):
    """Resize a boolean (H,W) mask; any occluded contribution stays occluded."""
    soft = resize_cover(mask[None].float(), size)[0]
    return soft > 1e-3


def resize_direct(img, size):
    return F.interpolate(img[None], size=(size, size), mode="bilinear", align_corners=False, antialias=True)[0]


@dataclass
class TrainBatch:
    frame_prev: torch.Tensor  # (B,3,S,S)
    frame_curr: torch.Tensor
    flow: torch.Tensor  # (B,2,S,S)
    occlusion: torch.Tensor  # (B,S,S) bool
    style: torch.Tensor  # (B,3,S,S)
    pairs: list
    styles: list

    def __len__(self):
        return self.frame_curr.shape[0]


def sample_indices(n_pairs, n_styles, rng, batch_size):
    return rng.integers(n_pairs, size=batch_size), rng.integers(n_styles, size=batch_size)


def sample_batch(video_index, style_index, seed, batch_size=6, size=256):
    """Draw ``batch_size`` (frame pair, style) samples uniformly.

    ``seed`` may be an int or a sequence of ints (e.g. ``(run_seed, step)``);
    identical seeds give identical batches.
    """
    if not video_index or not style_index:
        raise DatasetError("cannot sample from an empty index")
    rng = np.random.default_rng(seed)
    pair_ids, style_ids = sample_indices(len(video_index), len(style_index), rng, batch_size)
    prev, curr, flows, occs, styles = [], [], [], [], []
    for pi, si in zip(pair_ids, style_ids):
        pair = load_pair(video_index[pi])
        prev.append(resize_cover(torch.from_numpy(pair.frame_prev), size))
        curr.append(resize_cover(torch.from_numpy(pair.frame_curr), size))
        flows.append(resize_flow_cover(torch.from_numpy(pair.flow), size))
        occs.append(resize_mask_cover(torch.from_numpy(pair.occlusion), size))
        styles.append(resize_direct(torch.from_numpy(read_image(style_index[si])), size))
    return TrainBatch(
        torch.stack(prev).clamp(0, 1), torch.stack(curr).clamp(0, 1), torch.stack(flows),
        torch.stack(occs), torch.stack(styles).clamp(0, 1),
        [video_index[i] for i in pair_ids], [style_index[i] for i in style_ids],
    )
