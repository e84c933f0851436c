"""Training objectives.

Reductions: squared-L2 terms (feature/output distillation, depth) are mean
squared errors; the content loss keeps its unsquared L2 as a root mean
square; the style loss uses the Euclidean norm of per-channel statistic
differences, averaged over the batch. Feature pyramids are dicts keyed by
layer name (see :mod:`pqdast.networks`).
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .flip import FlipParams, flip_score
from .networks import channel_stats, mean_variance_normalize
from .warp import valid_mask, warp_to_previous

CONTENT_LAYERS = ("relu4_1", "relu5_1")

# order of columns in reports and training logs
TERM_ORDER = (
    "content", "style", "distill_feat", "distill_out", "distill_pq",
    "distill", "depth", "temporal",
)


class DepthPredictorError(RuntimeError):
    """The depth predictor failed or returned something unusable."""


@dataclass(frozen=True)
class LossWeights:
    content: float = 1.0
    style: float = 3.0
    distill: float = 1.0
    depth: float = 1.0
    temporal: float = 10.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _safe_norm(x, dim=None):
    sq = (x * x).sum(dim=dim) if dim is not None else (x * x).sum()
    pos = sq > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), 0.0)


def _rms(x):
    return _safe_norm(x) / x.numel() ** 0.5


def distill_feature_loss(student_feat, teacher_feat):
    """Mean squared difference between student and teacher transformer outputs."""
    _check_same(student_feat, teacher_feat)
    return F.mse_loss(student_feat, teacher_feat)


def distill_output_loss(student_img, teacher_img):
    """Mean squared difference between student and teacher decoder outputs."""
    _check_same(student_img, teacher_img)
    return F.mse_loss(student_img, teacher_img)


def distill_pq_loss(student_img, teacher_img, params=None):
    """FLIP between the teacher output (reference) and the student output.

    Decoder outputs are not bounded, so both are clamped into [0, 1] first,
    matching what :func:`pqdast.networks.stylize` would produce.
    """
    _check_same(student_img, teacher_img)
    return flip_score(teacher_img.clamp(0, 1), student_img.clamp(0, 1), params)


def distill_total(feat, out, pq):
    """Unweighted sum of the three distillation terms (any may be None)."""
    parts = [t for t in (feat, out, pq) if t is not None]
    return sum(parts[1:], parts[0]) if parts else torch.zeros(())


def content_loss(out_feats, content_feats, layers=CONTENT_LAYERS):
    """Sum over relu4_1/relu5_1 of the RMS difference of whitened features."""
    total = 0.0
    for name in layers:
        a, b = out_feats[name], content_feats[name]
        _check_same(a, b)
        total = total + _rms(mean_variance_normalize(a) - mean_variance_normalize(b))
    return total


def style_loss(out_feats, style_feats):
    """Sum over layers of ||mean difference|| + ||std difference||.

    Norms run over channels; batches are averaged.
    """
    if set(out_feats) != set(style_feats):
        raise ValueError(f"layer sets differ: {sorted(out_feats)} vs {sorted(style_feats)}")
    total = 0.0
    for name in out_feats:
        a, b = out_feats[name], style_feats[name]
        if a.shape[:-2] != b.shape[:-2]:
            raise ValueError(f"{name}: channel mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
        mu_a, sd_a = channel_stats(a)
        mu_b, sd_b = channel_stats(b)
        d_mu = (mu_a - mu_b).flatten(-3)
        d_sd = (sd_a - sd_b).flatten(-3)
        total = total + (_safe_norm(d_mu, dim=-1) + _safe_norm(d_sd, dim=-1)).mean()
    return total


class BlurDepthStub:
    """Deterministic stand-in for a monocular depth network.

    Returns a Gaussian blur of the Rec. 709 luminance. Pure and thread-safe.
    """

    def __init__(self, sigma=2.0):
        self.sigma = sigma
        r = max(1, int(3 * sigma + 0.5))
        x = torch.arange(-r, r + 1, dtype=torch.float64)
        k = torch.exp(-(x**2) / (2 * sigma * sigma))
        self.kernel = k / k.sum()

    def __call__(self, img):
        batch = img.unsqueeze(0) if img.dim() == 3 else img
        w = torch.tensor([0.2126, 0.7152, 0.0722], dtype=batch.dtype, device=batch.device)
        lum = torch.einsum("c,nchw->nhw", w, batch).unsqueeze(1)
        k = self.kernel.to(batch)
        r = k.numel() // 2
        lum = F.conv2d(F.pad(lum, (r, r, 0, 0), mode="replicate"), k.view(1, 1, 1, -1))
        lum = F.conv2d(F.pad(lum, (0, 0, r, r), mode="replicate"), k.view(1, 1, -1, 1))
        return lum[0] if img.dim() == 3 else lum


class DepthAnythingPredictor:
    """Relative depth from a pretrained Depth Anything checkpoint.

    Wraps a Hugging Face depth-estimation model with differentiable
    preprocessing (bicubic resize to a multiple of 14, ImageNet
    normalisation). The model is frozen. Concurrent calls are safe only if the
    underlying module is used on one device stream.
    """

    def __init__(self, model="LiheYoung/depth-anything-small-hf", size=518, device="cpu"):
        if isinstance(model, str):
            from transformers import AutoModelForDepthEstimation

            model = AutoModelForDepthEstimation.from_pretrained(model)
        self.model = model.to(device).eval().requires_grad_(False)
        self.size = size - size % 14

    def __call__(self, img):
        batch = img.unsqueeze(0) if img.dim() == 3 else img
        h, w = batch.shape[-2:]
        x = F.interpolate(batch, size=(self.size, self.size), mode="bicubic", align_corners=False)
        mean = torch.tensor([0.485, 0.456, 0.406], dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225], dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
        depth = self.model(pixel_values=(x - mean) / std).predicted_depth
        depth = F.interpolate(depth.unsqueeze(1), size=(h, w), mode="bilinear", align_corners=False)
        return depth[0] if img.dim() == 3 else depth


def _predict(predictor, img):
    try:
        depth = predictor(img)
    except Exception as exc:
        raise DepthPredictorError(f"depth predictor failed: {exc}") from exc
    if not torch.is_tensor(depth) or depth.shape[-2:] != img.shape[-2:]:
        raise DepthPredictorError("depth predictor returned a map of the wrong size")
    if not torch.isfinite(depth).all():
        raise DepthPredictorError("depth predictor returned non-finite values")
    return depth


def depth_loss(stylized, content, predictor):
    """MSE between predicted depth of the stylised and the content image.

    The content branch is detached; gradients reach only ``stylized``.
    """
    _check_same(stylized, content)
    target = _predict(predictor, content.detach()).detach()
    return F.mse_loss(_predict(predictor, stylized), target)


def temporal_loss(current, previous, flow, occlusion=None):
    """Occlusion-masked L1 between consecutive outputs after flow alignment.

    ``flow`` maps frame t-1 to frame t and ``occlusion`` (True = occluded)
    lives in frame t-1 coordinates, so ``current`` is warped back onto
    ``previous``. Pixels warped out of frame are excluded too. With no valid
    pixel the loss is 0.
    """
    squeeze = current.dim() == 3
    cur = current.unsqueeze(0) if squeeze else current
    prev = previous.unsqueeze(0) if squeeze else previous
    fl = flow.unsqueeze(0) if flow.dim() == 3 else flow
    _check_same(cur, prev)
    warped, _ = warp_to_previous(cur, fl)
    occ = None if occlusion is None else occlusion.reshape(cur.shape[0], *cur.shape[-2:])
    mask = valid_mask(fl, occ).unsqueeze(1).to(cur.dtype)
    diff = (warped - prev).abs() * mask
    count = mask.sum() * cur.shape[1]
    return diff.sum() / count.clamp(min=1.0)


@dataclass
class LossReport:
    """Active loss terms, the weights applied, and the weighted total."""

    terms: dict
    total: torch.Tensor
    weights: LossWeights = field(default_factory=LossWeights)

    def values(self):
        out = {k: float(torch.as_tensor(v).detach()) for k, v in self.terms.items()}
        out["total"] = float(self.total.detach())
        return out

    def columns(self):
        return [k for k in TERM_ORDER if k in self.terms] + ["total"]


def total_loss(terms, weights=None):
    """Weighted sum over the present top-level terms.

    ``terms`` may hold any of content, style, distill, depth, temporal, plus
    the distillation parts (distill_feat, distill_out, distill_pq), which are
    reported but enter the total only through ``distill``. Terms whose weight
    is zero are reported but left out of the sum, so they carry no gradient.
    """
    weights = weights or LossWeights()
    unknown = set(terms) - set(TERM_ORDER)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    total = None
    for name in ("content", "style", "distill", "depth", "temporal"):
        if name not in terms:
            continue
        w = getattr(weights, name)
        if w == 0:
            continue
        part = w * terms[name]
        total = part if total is None else total + part
    if total is None:
        total = torch.zeros(())
    return LossReport(dict(terms), torch.as_tensor(total), weights)
