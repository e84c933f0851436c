"""Independent oracles shared by the unit and acceptance tests.

Nothing here calls into pqdast's internals: the numpy/scipy FLIP stages, the
dense attention and the finite differences are written from the formulas.
"""

import numpy as np
import scipy.ndimage as ndi
import torch

from pqdast.data import read_image

from conftest import VIDEO_ROOT

# the published FLIP constants (rational forward matrix, decimal inverse)
SRGB_TO_XYZ = np.array([
    [10135552 / 24577794, 8788810 / 24577794, 4435075 / 24577794],
    [2613072 / 12288897, 8788810 / 12288897, 887015 / 12288897],
    [1425312 / 73733382, 8788810 / 73733382, 70074185 / 73733382],
])
XYZ_TO_SRGB = np.array([
    [3.241003275, -1.537398934, -0.498615861],
    [-0.969224334, 1.875930071, 0.041554224],
    [0.055639423, -0.204011202, 1.057148933],
])
D65 = SRGB_TO_XYZ.sum(axis=1)


def flip_pairs(h=48, w=64):
    """Six fixed (reference, test) sRGB pairs as float32 (3,H,W) arrays."""
    rng = np.random.default_rng(1234)
    ys, xs = np.mgrid[0:h, 0:w] / max(h, w)
    smooth = np.stack((xs, ys, 0.5 + 0.4 * np.sin(6 * xs * ys)))
    edges = np.stack([((xs * 8).astype(int) + (ys * 8).astype(int)) % 2 * 0.8 + 0.1] * 3)
    edges[2] *= 0.5
    frame = read_image(VIDEO_ROOT / "clean" / "alley" / "frame_0001.png")[:, :h, :w]
    noise = rng.uniform(0, 1, (3, h, w))
    pairs = [
        (smooth, np.clip(smooth + rng.normal(0, 0.05, smooth.shape), 0, 1)),
        (edges, ndi.gaussian_filter(edges, (0, 1.2, 1.2))),
        (frame, np.clip(frame * 0.8 + 0.1, 0, 1)),
        (frame, np.round(frame * 15) / 15),
        (noise, rng.uniform(0, 1, (3, h, w))),
        (smooth, smooth[[1, 2, 0]]),
    ]
    return [(a.astype(np.float32), b.astype(np.float32)) for a, b in pairs]


def reference_flip(ref, test, ppd=67.0):
    """Per-pixel map and mean from the published FLIP package."""
    import flip_evaluator

    out, mean, _ = flip_evaluator.evaluate(
        np.ascontiguousarray(ref.transpose(1, 2, 0)),
        np.ascontiguousarray(test.transpose(1, 2, 0)),
        "LDR", applyMagma=False, parameters={"ppd": float(ppd)},
    )
    return np.asarray(out)[..., 0], float(mean)


def np_srgb_to_linear(c):
    c = np.clip(c, 0, 1)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def np_ycxcz(img):
    xyz = np.einsum("ij,jhw->ihw", SRGB_TO_XYZ, np_srgb_to_linear(img)) / D65[:, None, None]
    return np.stack((116 * xyz[1] - 16, 500 * (xyz[0] - xyz[1]), 200 * (xyz[1] - xyz[2])))


def np_ycxcz_to_linrgb(ycc):
    y = (ycc[0] + 16) / 116
    xyz = np.stack((y + ycc[1] / 500, y, y - ycc[2] / 200)) * D65[:, None, None]
    return np.einsum("ij,jhw->ihw", XYZ_TO_SRGB, xyz)


def np_csf_kernels(ppd):
    params = [(1.0, 0.0047, 0.0, 1e-5), (1.0, 0.0053, 0.0, 1e-5), (34.1, 0.04, 13.5, 0.025)]
    radius = int(np.ceil(3 * np.sqrt(0.04 / (2 * np.pi**2)) * ppd))
    d = np.arange(-radius, radius + 1) / ppd
    r2 = d[:, None] ** 2 + d[None, :] ** 2
    out = []
    for a1, b1, a2, b2 in params:
        k = a1 * np.sqrt(np.pi / b1) * np.exp(-np.pi**2 * r2 / b1)
        k = k + a2 * np.sqrt(np.pi / b2) * np.exp(-np.pi**2 * r2 / b2)
        out.append(k / k.sum())
    return out


def np_csf_prefilter(img, ppd=67.0):
    """Filtered linear RGB (clamped), float64, via scipy convolution."""
    ycc = np_ycxcz(img.astype(np.float64))
    filtered = np.stack([ndi.convolve(ch, k, mode="nearest") for ch, k in zip(ycc, np_csf_kernels(ppd))])
    return np.clip(np_ycxcz_to_linrgb(filtered), 0, 1)


def np_feature_error(ref_y, test_y, ppd=67.0, w=0.082, qf=0.5):
    sd = 0.5 * w * ppd
    r = int(np.ceil(3 * sd))
    x = np.arange(-r, r + 1)
    gx, gy = np.meshgrid(x, x)
    g = np.exp(-(gx**2 + gy**2) / (2 * sd**2))

    def normalise(k):
        return np.where(k < 0, k / -k[k < 0].sum(), k / k[k > 0].sum())

    edge = normalise(-gx * g)
    point = normalise((gx**2 / sd**2 - 1) * g)

    def magnitude(y, k):
        # scipy convolve flips the kernel; correlate keeps orientation (the
        # magnitude is sign-agnostic either way)
        return np.hypot(ndi.correlate(y, k, mode="nearest"), ndi.correlate(y, k.T, mode="nearest"))

    d = np.maximum(
        np.abs(magnitude(ref_y, edge) - magnitude(test_y, edge)),
        np.abs(magnitude(ref_y, point) - magnitude(test_y, point)),
    )
    return (d / np.sqrt(2)) ** qf


def relative_fd_error(fn, x, eps=1e-6):
    """max-norm relative error between autograd and central differences.

    ``fn`` maps a float64 tensor to a scalar tensor.
    """
    x = x.detach().clone().double().requires_grad_(True)
    (grad,) = torch.autograd.grad(fn(x), x)
    fd = torch.zeros_like(x)
    flat = x.detach().view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            xp = x.detach().clone().view(-1)
            xp[i] = orig + eps
            fp = fn(xp.view_as(x)).item()
            xp[i] = orig - eps
            fm = fn(xp.view_as(x)).item()
            fd.view(-1)[i] = (fp - fm) / (2 * eps)
    scale = max(fd.abs().max().item(), 1e-12)
    return (grad - fd).abs().max().item() / scale


def dense_attention(content, style, sanet):
    """Brute-force attention with explicit per-position loops (float64)."""
    def mvn(f):
        mu = f.mean(dim=(1, 2), keepdim=True)
        sd = f.var(dim=(1, 2), unbiased=False, keepdim=True).clamp(min=1e-10).sqrt()
        return (f - mu) / sd

    W = lambda conv: conv.weight[:, :, 0, 0].double()
    B = lambda conv: conv.bias.double()
    c, s = content.double(), style.double()
    cn, sn = mvn(c), mvn(s)
    ch, h, w = c.shape
    sh, sw = s.shape[1:]
    out = torch.zeros(ch, h, w, dtype=torch.float64)
    for i in range(h * w):
        ci = cn[:, i // w, i % w]
        q = W(sanet.f) @ ci + B(sanet.f)
        logits = []
        for j in range(sh * sw):
            k = W(sanet.g) @ sn[:, j // sw, j % sw] + B(sanet.g)
            logits.append(q @ k)
        a = torch.softmax(torch.stack(logits), 0)
        v = sum(a[j] * (W(sanet.h) @ s[:, j // sw, j % sw] + B(sanet.h)) for j in range(sh * sw))
        out[:, i // w, i % w] = W(sanet.out_conv) @ v + B(sanet.out_conv)
    return out
