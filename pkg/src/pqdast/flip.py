"""Differentiable LDR-FLIP image difference evaluator.

FLIP compares a reference and a test image through two pipelines:

* a colour pipeline: sRGB -> YCxCz, contrast-sensitivity prefilter,
  Hunt-adjusted L*a*b*, HyAB distance, nonlinear redistribution onto [0, 1];
* a feature pipeline: edge and point detectors on the achromatic channel.

The per-pixel error is ``colour ** (1 - feature)``. Every stage is a torch
op, so :func:`flip_score` works as a training loss as well as an evaluator.

Images are ``(3, H, W)`` or ``(N, 3, H, W)`` tensors holding sRGB values in
[0, 1]. Constants follow the published FLIP reference implementation.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .colorspace import srgb_to_linear

# D65 white point and its reciprocal.
_WHITE = (0.950428545, 1.000000000, 1.088900371)
_INV_WHITE = (1.052156925, 1.000000000, 0.918357670)

_LINRGB_TO_XYZ = (
    (10135552 / 24577794, 8788810 / 24577794, 4435075 / 24577794),
    (2613072 / 12288897, 8788810 / 12288897, 887015 / 12288897),
    (1425312 / 73733382, 8788810 / 73733382, 70074185 / 73733382),
)
_XYZ_TO_LINRGB = (
    (3.241003275, -1.537398934, -0.498615861),
    (-0.969224334, 1.875930071, 0.041554224),
    (0.055639423, -0.204011202, 1.057148933),
)

# (a1, b1, a2, b2) of the Gaussian-sum CSF per opponent channel.
_CSF = {
    "A": (1.0, 0.0047, 0.0, 1e-5),
    "RG": (1.0, 0.0053, 0.0, 1e-5),
    "BY": (34.1, 0.04, 13.5, 0.025),
}

_EPS = 1e-15


@dataclass(frozen=True)
class FlipParams:
    ppd: float = 67.0
    qc: float = 0.7
    qf: float = 0.5
    pc: float = 0.4
    pt: float = 0.95
    w: float = 0.082

    def __post_init__(self):
        if not self.ppd > 0:
            raise ValueError(f"ppd must be positive, got {self.ppd}")
        if not (0 < self.qc <= 1 and 0 < self.qf <= 1):
            raise ValueError("qc and qf must lie in (0, 1]")
        if not (0 < self.pc < 1 and 0 < self.pt < 1):
            raise ValueError("pc and pt must lie in (0, 1)")
        if not self.w > 0:
            raise ValueError("w must be positive")


def _batched(img):
    if img.dim() == 3:
        return img.unsqueeze(0), True
    if img.dim() == 4:
        return img, False
    raise ValueError(f"expected (3,H,W) or (N,3,H,W), got shape {tuple(img.shape)}")


def _check_srgb(img):
    if not torch.is_tensor(img):
        raise TypeError("images must be torch tensors")
    if img.dim() not in (3, 4) or img.shape[-3] != 3:
        raise ValueError(f"expected 3 colour channels, got shape {tuple(img.shape)}")
    if not torch.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    if img.min() < 0 or img.max() > 1:
        raise ValueError("sRGB values must lie in [0, 1]")


def _mix(img, matrix):
    m = torch.tensor(matrix, dtype=img.dtype, device=img.device)
    return torch.einsum("ij,njhw->nihw", m, img)


def _scale(img, factors):
    f = torch.tensor(factors, dtype=img.dtype, device=img.device)
    return img * f.view(1, 3, 1, 1)


def _xyz_to_ycxcz(xyz):
    xyz = _scale(xyz, _INV_WHITE)
    x, y, z = xyz[:, 0:1], xyz[:, 1:2], xyz[:, 2:3]
    return torch.cat((116 * y - 16, 500 * (x - y), 200 * (y - z)), 1)


def _ycxcz_to_xyz(img):
    y = (img[:, 0:1] + 16) / 116
    cx = img[:, 1:2] / 500
    cz = img[:, 2:3] / 200
    return _scale(torch.cat((y + cx, y, y - cz), 1), _WHITE)


def _xyz_to_lab(xyz):
    xyz = _scale(xyz, _INV_WHITE)
    delta = 6 / 29
    cube = delta**3
    f = torch.where(
        xyz > cube,
        xyz.clamp(min=cube) ** (1.0 / 3.0),
        xyz / (3 * delta * delta) + 4 / 29,
    )
    fx, fy, fz = f[:, 0:1], f[:, 1:2], f[:, 2:3]
    return torch.cat((116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)), 1)


def srgb_to_ycxcz(img):
    """Linearise sRGB and map to the YCxCz opponent space (D65 white)."""
    _check_srgb(img)
    x, squeeze = _batched(img)
    out = _xyz_to_ycxcz(_mix(srgb_to_linear(x), _LINRGB_TO_XYZ))
    return out[0] if squeeze else out


def csf_kernel(ppd, channel):
    """Normalised 2-D CSF kernel for one opponent channel.

    All three kernels share one radius, set by the widest Gaussian, so the
    support grows linearly with ``ppd``.
    """
    a1, b1, a2, b2 = _CSF[channel]
    widest = max(b for p in _CSF.values() for b in (p[1], p[3]))
    r = int(np.ceil(3 * np.sqrt(widest / (2 * np.pi**2)) * ppd))
    dx = 1.0 / ppd
    x, y = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1))
    z = (x * dx) ** 2 + (y * dx) ** 2
    g = a1 * np.sqrt(np.pi / b1) * np.exp(-np.pi**2 * z / b1) + a2 * np.sqrt(
        np.pi / b2
    ) * np.exp(-np.pi**2 * z / b2)
    return g / g.sum()


def _csf_to_linrgb(ycxcz, ppd):
    kernels = [csf_kernel(ppd, c) for c in ("A", "RG", "BY")]
    r = kernels[0].shape[0] // 2
    weight = torch.from_numpy(np.stack(kernels)[:, None]).to(ycxcz)
    padded = F.pad(ycxcz, (r, r, r, r), mode="replicate")
    filtered = F.conv2d(padded, weight, groups=3)
    linrgb = _mix(_ycxcz_to_xyz(filtered), _XYZ_TO_LINRGB)
    return linrgb.clamp(0.0, 1.0)


def csf_prefilter(img, ppd=67.0):
    """Filter each YCxCz channel by its CSF and clamp to the RGB cube.

    Returns YCxCz again; the clamp happens in linear RGB, where the valid
    colour volume is a box.
    """
    if not ppd > 0:
        raise ValueError(f"ppd must be positive, got {ppd}")
    x, squeeze = _batched(img)
    lin = _csf_to_linrgb(x, ppd)
    out = _xyz_to_ycxcz(_mix(lin, _LINRGB_TO_XYZ))
    return out[0] if squeeze else out


def _hunt(lab):
    L = lab[:, 0:1]
    return torch.cat((L, 0.01 * L * lab[:, 1:2], 0.01 * L * lab[:, 2:3]), 1)


def _safe_sqrt(x):
    # zero maps to exactly zero with a zero subgradient
    pos = x > _EPS
    return torch.where(pos, torch.sqrt(torch.where(pos, x, torch.ones_like(x))), 0.0)


def _safe_pow(x, q):
    pos = x > _EPS
    return torch.where(pos, torch.where(pos, x, torch.ones_like(x)) ** q, 0.0)


def _hyab(a, b):
    d = a - b
    return d[:, 0].abs() + _safe_sqrt(d[:, 1] ** 2 + d[:, 2] ** 2)


def _max_color_distance(qc):
    """HyAB distance between Hunt-adjusted green and blue, raised to qc."""
    prim = torch.tensor([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    lab = _hunt(_xyz_to_lab(_mix(prim.view(1, 3, 1, 2), _LINRGB_TO_XYZ)))
    return float(_hyab(lab[..., 0:1], lab[..., 1:2]).item()) ** qc


def _redistribute(power_err, cmax, pc, pt):
    knee = pc * cmax
    return torch.where(
        power_err < knee,
        (pt / knee) * power_err,
        pt + ((power_err - knee) / (cmax - knee)) * (1.0 - pt),
    )


def _color_error_lin(ref_lin, test_lin, params):
    ref = _hunt(_xyz_to_lab(_mix(ref_lin, _LINRGB_TO_XYZ)))
    test = _hunt(_xyz_to_lab(_mix(test_lin, _LINRGB_TO_XYZ)))
    err = _safe_pow(_hyab(ref, test), params.qc)
    return _redistribute(err, _max_color_distance(params.qc), params.pc, params.pt)


def color_error(ref, test, params=None):
    """Colour-pipeline error between two prefiltered YCxCz images."""
    params = params or FlipParams()
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {tuple(ref.shape)} vs {tuple(test.shape)}")
    r, squeeze = _batched(ref)
    t, _ = _batched(test)
    out = _color_error_lin(
        _mix(_ycxcz_to_xyz(r), _XYZ_TO_LINRGB), _mix(_ycxcz_to_xyz(t), _XYZ_TO_LINRGB), params
    )
    return out[0] if squeeze else out


def feature_kernel(ppd, kind, w=0.082):
    """x-direction edge (first derivative) or point (second derivative) filter.

    Positive and negative lobes are normalised to +1 and -1 respectively.
    """
    sd = 0.5 * w * ppd
    r = int(np.ceil(3 * sd))
    x, y = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1))
    g = np.exp(-(x**2 + y**2) / (2 * sd * sd))
    if kind == "edge":
        gx = -x * g
    elif kind == "point":
        gx = (x**2 / (sd * sd) - 1) * g
    else:
        raise ValueError(f"unknown feature kind {kind!r}")
    neg = -gx[gx < 0].sum()
    pos = gx[gx > 0].sum()
    return np.where(gx < 0, gx / neg, gx / pos)


def _feature_magnitude(y, kernel):
    r = kernel.shape[0] // 2
    k = torch.from_numpy(kernel).to(y)
    weight = torch.stack((k, k.T))[:, None]
    resp = F.conv2d(F.pad(y, (r, r, r, r), mode="replicate"), weight)
    return _safe_sqrt(resp[:, 0] ** 2 + resp[:, 1] ** 2)


def feature_error(ref_y, test_y, params=None):
    """Feature-pipeline error between two achromatic channels in [0, 1].

    Inputs are ``(H, W)`` or ``(N, H, W)``; the YCxCz luminance is mapped to
    [0, 1] by ``(Y + 16) / 116`` before it gets here.
    """
    params = params or FlipParams()
    if ref_y.shape != test_y.shape:
        raise ValueError(f"shape mismatch: {tuple(ref_y.shape)} vs {tuple(test_y.shape)}")
    squeeze = ref_y.dim() == 2
    r = ref_y.reshape(-1, 1, *ref_y.shape[-2:])
    t = test_y.reshape(-1, 1, *test_y.shape[-2:])
    edge = feature_kernel(params.ppd, "edge", params.w)
    point = feature_kernel(params.ppd, "point", params.w)
    d_edge = (_feature_magnitude(r, edge) - _feature_magnitude(t, edge)).abs()
    d_point = (_feature_magnitude(r, point) - _feature_magnitude(t, point)).abs()
    out = _safe_pow(torch.maximum(d_edge, d_point) / math.sqrt(2), params.qf)
    return out[0] if squeeze else out


def flip_map(ref, test, params=None):
    """Per-pixel FLIP error in [0, 1], shaped like the inputs minus channels."""
    params = params or FlipParams()
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {tuple(ref.shape)} vs {tuple(test.shape)}")
    _check_srgb(ref)
    _check_srgb(test)
    r, squeeze = _batched(ref)
    t, _ = _batched(test)
    r_ycc = _xyz_to_ycxcz(_mix(srgb_to_linear(r), _LINRGB_TO_XYZ))
    t_ycc = _xyz_to_ycxcz(_mix(srgb_to_linear(t), _LINRGB_TO_XYZ))

    d_color = _color_error_lin(
        _csf_to_linrgb(r_ycc, params.ppd), _csf_to_linrgb(t_ycc, params.ppd), params
    )
    d_feature = feature_error(
        (r_ycc[:, 0] + 16) / 116, (t_ycc[:, 0] + 16) / 116, params
    )
    out = d_color ** (1 - d_feature)
    return out[0] if squeeze else out


def flip_score(ref, test, params=None):
    """Mean of :func:`flip_map`; differentiable in both arguments."""
    return flip_map(ref, test, params).mean()


def magma_colormap():
    """The 256-entry magma lookup table used for heatmaps, as uint8 RGB."""
    from matplotlib import colormaps

    return np.round(colormaps["magma"](np.arange(256))[:, :3] * 255).astype(np.uint8)


def flip_heatmap(error_map):
    """Colour an (H, W) error map in [0, 1] with magma; returns uint8 HxWx3."""
    e = error_map.detach().cpu().numpy() if torch.is_tensor(error_map) else error_map
    idx = np.clip(np.round(np.asarray(e) * 255.0), 0, 255).astype(np.int64)
    return magma_colormap()[idx]
