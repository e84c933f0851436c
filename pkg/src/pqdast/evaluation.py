"""Temporal-consistency metrics and report tables.

Conventions
-----------
* warping error: for each consecutive pair, frame t is warped onto frame t-1
  with the t-1 -> t flow; the squared difference is averaged over RGB and over
  pixels that are neither occluded nor warped out of frame. Pair values are
  averaged and multiplied by 10.
* consecutive perceptual error: LPIPS-style distance between consecutive
  frames (unit-normalised features, squared difference, spatial mean, summed
  over layers), averaged over pairs and multiplied by 10. The feature network
  is pluggable and its name is recorded in reports.
* temporal FLIP: FLIP between frame t-1 (reference) and frame t, per pair.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from PIL import Image

from .data import IMAGE_SUFFIXES, load_flow, load_occlusion, read_image
from .flip import flip_heatmap, flip_map
from .networks import VGGEncoder
from .warp import valid_mask, warp_to_previous

log = logging.getLogger(__name__)

SCALE = 10.0


def _as_batch(frames):
    if torch.is_tensor(frames):
        x = frames
    else:
        x = torch.stack([torch.as_tensor(np.asarray(f)) if not torch.is_tensor(f) else f for f in frames])
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected N x 3 x H x W frames, got {tuple(x.shape)}")
    if x.shape[0] < 2:
        raise ValueError("need at least two frames")
    return x


def warping_error_series(frames, flows, occlusions=None):
    """Unscaled per-pair masked MSE; ``flows[i]`` maps frame i to frame i+1."""
    x = _as_batch(frames).double()
    n = x.shape[0]
    if len(flows) != n - 1:
        raise ValueError(f"{n} frames need {n - 1} flows, got {len(flows)}")
    if occlusions is not None and len(occlusions) != n - 1:
        raise ValueError(f"{n} frames need {n - 1} occlusion masks, got {len(occlusions)}")
    series = []
    for i in range(n - 1):
        flow = torch.as_tensor(np.asarray(flows[i])).double()[None]
        occ = None if occlusions is None else torch.as_tensor(np.asarray(occlusions[i]))[None]
        warped, _ = warp_to_previous(x[i + 1 : i + 2], flow)
        mask = valid_mask(flow, occ)[0]
        if not mask.any():
            series.append(0.0)
            continue
        diff = ((warped[0] - x[i]) ** 2).mean(dim=0)
        series.append(float(diff[mask].mean()))
    return series


def warping_error(frames, flows, occlusions=None):
    """Mean occlusion-masked MSE between aligned consecutive frames, x10."""
    return SCALE * float(np.mean(warping_error_series(frames, flows, occlusions)))


class PerceptualNet(nn.Module):
    """Feature pyramid for LPIPS-style distances; subclasses set ``name``."""

    name = "perceptual"

    def features(self, img):
        raise NotImplementedError


class SurrogatePerceptualNet(PerceptualNet):
    """Fixed-seed random conv stack (offline stand-in for a pretrained backbone)."""

    def __init__(self, seed=0, widths=(16, 32, 64)):
        super().__init__()
        self.name = f"surrogate:{seed}"
        g = torch.Generator().manual_seed(seed)
        layers, cin = [], 3
        for cout in widths:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * (2.0 / (9 * cin)) ** 0.5)
                conv.bias.zero_()
            layers.append(conv)
            cin = cout
        self.convs = nn.ModuleList(layers)
        self.requires_grad_(False).eval()

    def features(self, img):
        feats, x = [], img * 2 - 1
        for conv in self.convs:
            x = torch.relu(conv(x))
            feats.append(x)
        return feats


class VGGPerceptualNet(PerceptualNet):
    """relu1_1 ... relu5_1 of a VGG encoder."""

    def __init__(self, encoder):
        super().__init__()
        self.encoder = encoder
        self.name = f"vgg:{encoder.source}"

    def features(self, img):
        return list(self.encoder(img).values())


def perceptual_distance(a, b, net):
    """LPIPS-style distance per batch element, with uniform layer weights."""
    total = 0.0
    for fa, fb in zip(net.features(a), net.features(b)):
        na = fa / (fa.norm(dim=1, keepdim=True) + 1e-10)
        nb = fb / (fb.norm(dim=1, keepdim=True) + 1e-10)
        total = total + ((na - nb) ** 2).sum(dim=1).mean(dim=(-2, -1))
    return total


@torch.no_grad()
def consecutive_perceptual_series(frames, net):
    if net is None:
        raise ValueError("a perceptual feature network is required")
    x = _as_batch(frames).float()
    return [float(v) for v in perceptual_distance(x[:-1], x[1:], net)]


def consecutive_perceptual_error(frames, net):
    """Mean perceptual distance between consecutive frames, x10."""
    return SCALE * float(np.mean(consecutive_perceptual_series(frames, net)))


def temporal_flip_series(frames, params=None, heatmap_dir=None, prefix="pair"):
    """FLIP of every consecutive pair (frame t-1 as reference).

    Returns (scores, maps); with ``heatmap_dir`` the magma heatmaps are written
    as ``<prefix>_<t>.png``.
    """
    x = _as_batch(frames).float()
    scores, maps = [], []
    for i in range(x.shape[0] - 1):
        m = flip_map(x[i], x[i + 1], params)
        maps.append(m)
        scores.append(float(m.mean()))
    if heatmap_dir is not None:
        heatmap_dir = Path(heatmap_dir)
        heatmap_dir.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(maps, start=1):
            Image.fromarray(flip_heatmap(m)).save(heatmap_dir / f"{prefix}_{i:04d}.png")
    return scores, maps


@dataclass
class SequenceResult:
    """Raw (unscaled) per-pair series of one stylised sequence."""

    style: str
    scene: str
    warping: list
    perceptual: list
    flip: list
    backbone: str = ""
    reference_flip: list = field(default_factory=list)

    def row(self):
        return {
            "style": self.style,
            "scene": self.scene,
            "pairs": len(self.flip),
            "warping_error_x10": SCALE * float(np.mean(self.warping)) if self.warping else float("nan"),
            "perceptual_x10": SCALE * float(np.mean(self.perceptual)) if self.perceptual else float("nan"),
            "temporal_flip": float(np.mean(self.flip)),
            "reference_flip": float(np.mean(self.reference_flip)) if self.reference_flip else float("nan"),
            "backbone": self.backbone,
        }


REPORT_COLUMNS = ("style", "scene", "pairs", "warping_error_x10", "perceptual_x10",
                  "temporal_flip", "reference_flip", "backbone")
SERIES_COLUMNS = ("style", "scene", "pair", "warping", "perceptual", "flip", "reference_flip")


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def make_report(runs, out_path):
    """Write the summary TSV, ``<out>.series.tsv`` and ``<out>.txt``.

    Rows are sorted by (style, scene). Returns the summary rows.
    """
    runs = sorted(runs, key=lambda r: (r.style, r.scene))
    if not runs:
        raise ValueError("no sequences to report")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = [r.row() for r in runs]
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t")
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])

    series_path = out_path.with_suffix(".series.tsv")
    with open(series_path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t")
        w.writerow(SERIES_COLUMNS)
        for r in runs:
            for i in range(len(r.flip)):
                vals = [
                    r.warping[i] if r.warping else float("nan"),
                    r.perceptual[i] if r.perceptual else float("nan"),
                    r.flip[i],
                    r.reference_flip[i] if r.reference_flip else float("nan"),
                ]
                w.writerow([r.style, r.scene, i + 1, *(f"{v:.9g}" for v in vals)])

    widths = {c: max(len(c), *(len(_fmt(row[c])) for row in rows)) for c in REPORT_COLUMNS}
    lines = ["  ".join(c.ljust(widths[c]) for c in REPORT_COLUMNS)]
    lines.append("  ".join("-" * widths[c] for c in REPORT_COLUMNS))
    for row in rows:
        lines.append("  ".join(_fmt(row[c]).ljust(widths[c]) for c in REPORT_COLUMNS))
    out_path.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    return rows


def read_series(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f, delimiter="\t"))


def _sorted_files(folder, suffixes):
    return sorted(p for p in Path(folder).iterdir() if p.suffix.lower() in suffixes)


def evaluate_sequence(frames_dir, flows_dir=None, occlusions_dir=None, net=None,
                      params=None, heatmap_dir=None, reference_dir=None,
                      style="", scene=""):
    """Evaluate one directory of frames; missing inputs leave their series empty."""
    paths = _sorted_files(frames_dir, IMAGE_SUFFIXES)
    if len(paths) < 2:
        raise ValueError(f"{frames_dir}: need at least two frames")
    frames = torch.stack([torch.from_numpy(read_image(p)) for p in paths])
    warping = []
    if flows_dir is not None:
        flows = [load_flow(p) for p in _sorted_files(flows_dir, {".flo"})]
        occs = None
        if occlusions_dir is not None:
            occs = [load_occlusion(p) for p in _sorted_files(occlusions_dir, {".png"})]
        warping = warping_error_series(frames, flows[: len(paths) - 1], None if occs is None else occs[: len(paths) - 1])
    perceptual = consecutive_perceptual_series(frames, net) if net is not None else []
    flip, _ = temporal_flip_series(frames, params, heatmap_dir, prefix="stylized")
    ref_flip = []
    if reference_dir is not None:
        ref = torch.stack([torch.from_numpy(read_image(p)) for p in _sorted_files(reference_dir, IMAGE_SUFFIXES)])
        ref_flip, _ = temporal_flip_series(ref[: len(paths)], params, heatmap_dir, prefix="original")
    return SequenceResult(
        style or Path(frames_dir).parent.name, scene or Path(frames_dir).name,
        warping, perceptual, flip, net.name if net is not None else "", ref_flip,
    )


def perceptual_net_from_spec(spec):
    """``surrogate:<seed>``, a VGG weight file, or ``none``."""
    if spec in (None, "", "none"):
        return None
    if spec.startswith("surrogate:"):
        return SurrogatePerceptualNet(int(spec.split(":", 1)[1]))
    return VGGPerceptualNet(VGGEncoder.from_file(spec))
