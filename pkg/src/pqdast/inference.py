"""Per-frame image/video stylisation and ONNX export.

Colour contract: networks consume and produce sRGB-encoded values in [0, 1].
A renderer working in linear RGB converts with :func:`linear_to_srgb` before
the network and :func:`srgb_to_linear` after it.
"""

import json
import logging
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import CheckpointError, load_model
from .colorspace import linear_to_srgb, srgb_to_linear  # noqa: F401  (public re-export)
from .data import IMAGE_SUFFIXES, read_image, write_image
from .networks import stylize

log = logging.getLogger(__name__)

COLOR_CONTRACT = (
    "inputs and output are sRGB-encoded RGB in [0, 1], layout N x 3 x H x W float32; "
    "convert linear renderer buffers with linear_to_srgb before inference and "
    "srgb_to_linear after it"
)


class ExportError(RuntimeError):
    pass


def list_frames(path):
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(f"no such file or directory: {path}")
    frames = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not frames:
        raise FileNotFoundError(f"{path}: no images")
    return frames


def load_style(path):
    try:
        return torch.from_numpy(read_image(path))
    except Exception as exc:
        raise ValueError(f"unreadable style image {path}: {exc}") from exc


@torch.no_grad()
def stylize_video(frames, style, model, out_dir):
    """Stylise every frame independently and write ``out_dir/<frame name>.png``.

    ``frames`` is a directory, a single image, or a list of paths; ``style`` a
    path or a (3,H,W) tensor. Returns the written paths in frame order.
    """
    paths = list_frames(frames) if isinstance(frames, (str, Path)) else [Path(p) for p in frames]
    style_img = load_style(style) if isinstance(style, (str, Path)) else style
    if style_img.shape[-2] % 16 or style_img.shape[-1] % 16:
        raise ValueError(f"style size {tuple(style_img.shape[-2:])} is not divisible by 16")
    images = [torch.from_numpy(read_image(p)) for p in paths]
    sizes = {tuple(img.shape[-2:]) for img in images}
    if len(sizes) > 1:
        raise ValueError(f"frames have mixed sizes: {sorted(sizes)}")
    h, w = sizes.pop()
    if h % 16 or w % 16:
        raise ValueError(f"frame size {h}x{w} is not divisible by 16")
    model.eval()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path, img in zip(paths, images):
        out = stylize(img, style_img, model)
        target = out_dir / (path.stem + ".png")
        write_image(target, out)
        written.append(target)
    return written


class _Fused(nn.Module):
    """Encoder + transformer + decoder + clamp as one two-input graph."""

    def __init__(self, model):
        super().__init__()
        self.model = model

    def forward(self, content, style):
        return self.model(content, style).clamp(0.0, 1.0)


@dataclass
class ExportBundle:
    graph_path: str
    inputs: dict
    output: dict
    color_contract: str
    role: str
    opset: int

    def write_sidecar(self):
        path = Path(self.graph_path).with_suffix(".json")
        path.write_text(json.dumps(asdict(self), indent=2))
        return path


def export_model(checkpoint, out_path, size=(256, 256), style_size=None,
                 encoder_weights=None, opset=18, model=None):
    """Export a checkpoint (or ``model``) to ONNX; returns an :class:`ExportBundle`.

    The graph has fixed spatial sizes. Unsupported operators raise
    :class:`ExportError`; nothing is substituted.
    """
    import onnx

    if model is None:
        try:
            model = load_model(checkpoint, encoder_weights=encoder_weights)
        except CheckpointError as exc:
            raise ExportError(f"cannot export {checkpoint}: {exc}") from exc
    h, w = size
    sh, sw = style_size or size
    for dim in (h, w, sh, sw):
        if dim % 16:
            raise ExportError(f"export sizes must be divisible by 16, got {size} / {style_size}")
    fused = _Fused(model).eval()
    content = torch.zeros(1, 3, h, w)
    style = torch.zeros(1, 3, sh, sw)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        # shape checks become trace-time constants, which is intended for a
        # fixed-size graph
        with torch.no_grad(), warnings.catch_warnings():
            warnings.simplefilter("ignore", torch.jit.TracerWarning)
            warnings.simplefilter("ignore", DeprecationWarning)
            torch.onnx.export(
                fused, (content, style), str(out_path),
                input_names=["content", "style"], output_names=["stylized"],
                opset_version=opset, dynamo=False,
            )
    except Exception as exc:
        raise ExportError(f"ONNX export failed: {exc}") from exc

    bundle = ExportBundle(
        graph_path=str(out_path),
        inputs={"content": [1, 3, h, w], "style": [1, 3, sh, sw]},
        output={"stylized": [1, 3, h, w]},
        color_contract=COLOR_CONTRACT,
        role=model.role,
        opset=opset,
    )
    proto = onnx.load(str(out_path))
    props = {"color_contract": COLOR_CONTRACT, "role": model.role,
             "input_spec": json.dumps(bundle.inputs), "range": "[0, 1] sRGB"}
    for key, value in props.items():
        entry = proto.metadata_props.add()
        entry.key, entry.value = key, value
    onnx.checker.check_model(proto)
    onnx.save(proto, str(out_path))
    bundle.write_sidecar()
    return bundle


def run_onnx(graph_path, content, style):
    """Evaluate an exported graph with onnxruntime on numpy (N,3,H,W) arrays."""
    import onnxruntime as ort

    sess = ort.InferenceSession(str(graph_path), providers=["CPUExecutionProvider"])
    feeds = {"content": np.asarray(content, np.float32), "style": np.asarray(style, np.float32)}
    return sess.run(["stylized"], feeds)[0]
