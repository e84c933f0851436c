"""Encoder, style-attentional transformer and decoders.

The encoder is the 19-layer VGG in its "normalised" form (a leading 1x1
colour conv, reflection padding) truncated at relu5_1. It is frozen and
shared between teacher and student. Only the transformer and decoder are
trained, and only they are written to checkpoints.

Widths::

    teacher  SANet 512 -> 512 (x3), 512 -> 512 out    9-conv decoder
    student  SANet 512 -> 256 (x3), 256 -> 512 out    4-conv decoder
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

log = logging.getLogger(__name__)

LAYERS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1")
LAYER_CHANNELS = {"relu1_1": 64, "relu2_1": 128, "relu3_1": 256, "relu4_1": 512, "relu5_1": 512}
LAYER_STRIDES = {"relu1_1": 1, "relu2_1": 2, "relu3_1": 4, "relu4_1": 8, "relu5_1": 16}

TEACHER_WIDTH = 512
STUDENT_WIDTH = 256

# (in, out, relu, upsample-after)
TEACHER_DECODER = (
    (512, 256, True, True),
    (256, 256, True, False),
    (256, 256, True, False),
    (256, 256, True, False),
    (256, 128, True, True),
    (128, 128, True, False),
    (128, 64, True, True),
    (64, 64, True, False),
    (64, 3, False, False),
)
STUDENT_DECODER = (
    (512, 128, True, True),
    (128, 64, True, True),
    (64, 32, True, True),
    (32, 3, False, False),
)

# Sequential layout of the normalised VGG-19 up to relu5_1; indices match the
# widely distributed ``vgg_normalised.pth`` state dict.
_VGG_CONVS = (
    (3, 64), (64, 64), "pool",
    (64, 128), (128, 128), "pool",
    (128, 256), (256, 256), (256, 256), (256, 256), "pool",
    (256, 512), (512, 512), (512, 512), (512, 512), "pool",
    (512, 512),
)
_SLICE_ENDS = (4, 11, 18, 31, 44)
# torchvision ``vgg19().features`` conv indices in the same order
_TORCHVISION_CONVS = (0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28)
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


def _vgg_layers():
    layers = [nn.Conv2d(3, 3, 1)]
    for item in _VGG_CONVS:
        if item == "pool":
            layers.append(nn.MaxPool2d(2, 2, ceil_mode=True))
        else:
            layers += [nn.ReflectionPad2d(1), nn.Conv2d(*item, 3), nn.ReLU()]
    return nn.Sequential(*layers)


class VGGEncoder(nn.Module):
    """Frozen VGG-19 feature extractor returning the five relu*_1 maps."""

    def __init__(self, source="uninitialised"):
        super().__init__()
        self.net = _vgg_layers()
        self.source = source
        self.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        # always inference mode; nothing here has train-time behaviour anyway
        return super().train(False)

    @classmethod
    def surrogate(cls, seed=0):
        """Fixed-seed random encoder with the real topology, for offline tests."""
        enc = cls(source=f"surrogate:{seed}")
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            convs = [m for m in enc.net if isinstance(m, nn.Conv2d)]
            convs[0].weight.copy_(torch.eye(3).view(3, 3, 1, 1))
            convs[0].bias.fill_(-0.5)
            for conv in convs[1:]:
                fan_in = conv.in_channels * 9
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
        return enc

    @classmethod
    def from_file(cls, path):
        """Load normalised-VGG or torchvision VGG-19 weights from ``path``."""
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"encoder weights not found: {path}")
        state = torch.load(path, map_location="cpu", weights_only=True)
        if "state_dict" in state:
            state = state["state_dict"]
        enc = cls(source=f"file:{path.name}")
        if "features.0.weight" in state:
            enc._load_torchvision(state)
        else:
            own = enc.net.state_dict()
            missing = [k for k in own if k not in state]
            if missing:
                raise ValueError(f"{path} is not a VGG-19 weight file (missing {missing[:3]})")
            enc.net.load_state_dict({k: state[k] for k in own})
        return enc

    def _load_torchvision(self, state):
        convs = [m for m in self.net if isinstance(m, nn.Conv2d)]
        with torch.no_grad():
            # fold ImageNet standardisation into the leading 1x1 conv
            std = torch.tensor(_IMAGENET_STD)
            mean = torch.tensor(_IMAGENET_MEAN)
            convs[0].weight.copy_(torch.diag(1 / std).view(3, 3, 1, 1))
            convs[0].bias.copy_(-mean / std)
            for conv, idx in zip(convs[1:], _TORCHVISION_CONVS):
                conv.weight.copy_(state[f"features.{idx}.weight"])
                conv.bias.copy_(state[f"features.{idx}.bias"])
        log.info("loaded torchvision VGG-19 weights (zero padding replaced by reflection)")

    def forward(self, img):
        """Return a dict ``{layer name: (N, C, H/s, W/s)}`` for all five layers."""
        if img.dim() != 4 or img.shape[1] != 3:
            raise ValueError(f"expected (N,3,H,W) image batch, got {tuple(img.shape)}")
        h, w = img.shape[-2:]
        if h % 16 or w % 16:
            raise ValueError(f"spatial size {h}x{w} must be divisible by 16")
        feats = {}
        x = img
        start = 0
        for name, end in zip(LAYERS, _SLICE_ENDS):
            x = self.net[start:end](x)
            feats[name] = x
            start = end
        return feats


def encode(img, encoder):
    """Feature pyramid of a ``(3,H,W)`` or ``(N,3,H,W)`` image."""
    batch = img.unsqueeze(0) if img.dim() == 3 else img
    feats = encoder(batch)
    if img.dim() == 3:
        return {k: v[0] for k, v in feats.items()}
    return feats


def channel_stats(feat, eps=1e-5):
    """Per-channel spatial mean and (population) std of ``(..., C, H, W)``."""
    mean = feat.mean(dim=(-2, -1), keepdim=True)
    var = feat.var(dim=(-2, -1), keepdim=True, unbiased=False)
    return mean, var.clamp(min=eps * eps).sqrt()


def mean_variance_normalize(feat, eps=1e-5):
    """Whiten each channel over its spatial positions.

    The standard deviation is floored at ``eps`` instead of having ``eps``
    added, which keeps the operation exactly affine-invariant and idempotent
    for any channel with std above the floor. Constant channels map to zero.
    """
    mean, std = channel_stats(feat, eps)
    return (feat - mean) / std


class SANet(nn.Module):
    """Style-attentional block: content positions attend over style positions.

    ``out_conv`` is the residual projection; its output is added to the
    content features.
    """

    def __init__(self, channels=512, width=512):
        super().__init__()
        self.f = nn.Conv2d(channels, width, 1)
        self.g = nn.Conv2d(channels, width, 1)
        self.h = nn.Conv2d(channels, width, 1)
        self.out_conv = nn.Conv2d(width, channels, 1)

    def attention(self, content, style):
        """Row-stochastic ``(N, HW_content, HW_style)`` attention matrix."""
        q = self.f(mean_variance_normalize(content)).flatten(2).transpose(1, 2)
        k = self.g(mean_variance_normalize(style)).flatten(2)
        return torch.softmax(torch.bmm(q, k), dim=-1)

    def attend(self, content, style):
        """Attention output projected back to 512 channels (before the residual)."""
        n, _, h, w = content.shape
        v = self.h(style).flatten(2)
        out = torch.bmm(v, self.attention(content, style).transpose(1, 2))
        return self.out_conv(out.view(n, -1, h, w))

    def forward(self, content, style):
        if content.shape[1] != style.shape[1]:
            raise ValueError(f"channel mismatch: {content.shape[1]} vs {style.shape[1]}")
        return content + self.attend(content, style)


def sanet_forward(content, style, sanet):
    """Attention output of ``sanet`` for ``(C,H,W)`` or batched feature maps."""
    if content.dim() == 3:
        return sanet.attend(content.unsqueeze(0), style.unsqueeze(0))[0]
    return sanet.attend(content, style)


class Transformer(nn.Module):
    """Two SANets (relu4_1, relu5_1) merged by a reflection-padded 3x3 conv."""

    def __init__(self, width=TEACHER_WIDTH):
        super().__init__()
        self.width = width
        self.sanet4 = SANet(512, width)
        self.sanet5 = SANet(512, width)
        self.merge_pad = nn.ReflectionPad2d(1)
        self.merge_conv = nn.Conv2d(512, 512, 3)

    def forward(self, content4, style4, content5, style5):
        fused5 = F.interpolate(self.sanet5(content5, style5), scale_factor=2, mode="nearest")
        fused4 = self.sanet4(content4, style4)
        if fused4.shape != fused5.shape:
            raise ValueError(
                f"relu4_1 branch {tuple(fused4.shape)} does not match upsampled "
                f"relu5_1 branch {tuple(fused5.shape)}"
            )
        return self.merge_conv(self.merge_pad(fused4 + fused5))


def transformer_forward(content4, style4, content5, style5, transformer):
    return transformer(content4, style4, content5, style5)


class Decoder(nn.Module):
    """Stack of reflection-padded 3x3 convs described by a layer spec."""

    def __init__(self, spec=TEACHER_DECODER):
        super().__init__()
        self.spec = tuple(tuple(layer) for layer in spec)
        layers = []
        for cin, cout, relu, up in self.spec:
            layers += [nn.ReflectionPad2d(1), nn.Conv2d(cin, cout, 3)]
            if relu:
                layers.append(nn.ReLU())
            if up:
                layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
        self.net = nn.Sequential(*layers)

    def forward(self, feat):
        if feat.shape[1] != self.spec[0][0]:
            raise ValueError(f"decoder expects {self.spec[0][0]} channels, got {feat.shape[1]}")
        return self.net(feat)


def decode(feat, decoder):
    if feat.dim() == 3:
        return decoder(feat.unsqueeze(0))[0]
    return decoder(feat)


@dataclass(frozen=True)
class ModelSpec:
    role: str
    width: int
    decoder: tuple

    @classmethod
    def for_role(cls, role):
        if role == "teacher":
            return cls("teacher", TEACHER_WIDTH, TEACHER_DECODER)
        if role == "student":
            return cls("student", STUDENT_WIDTH, STUDENT_DECODER)
        raise ValueError(f"unknown role {role!r}")


class StyleTransferModel(nn.Module):
    """Encoder reference + trainable transformer and decoder."""

    def __init__(self, encoder, spec):
        super().__init__()
        self.spec = spec
        self.encoder = encoder
        self.transformer = Transformer(spec.width)
        self.decoder = Decoder(spec.decoder)

    @property
    def role(self):
        return self.spec.role

    @classmethod
    def build(cls, role, encoder, seed=None):
        """Fresh model; with ``seed`` the init is reproducible and the global RNG untouched."""
        if seed is None:
            return cls(encoder, ModelSpec.for_role(role))
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return cls(encoder, ModelSpec.for_role(role))

    def trainable_parameters(self):
        yield from self.transformer.parameters()
        yield from self.decoder.parameters()

    def fuse(self, content_feats, style_feats):
        return self.transformer(
            content_feats["relu4_1"], style_feats["relu4_1"],
            content_feats["relu5_1"], style_feats["relu5_1"],
        )

    def forward(self, content, style):
        """Unclamped decoder output for image batches."""
        return self.decoder(self.fuse(self.encoder(content), self.encoder(style)))


def stylize(content, style, model):
    """Stylise ``content`` with ``style``; output clamped to [0, 1]."""
    squeeze = content.dim() == 3
    c = content.unsqueeze(0) if squeeze else content
    s = style.unsqueeze(0) if style.dim() == 3 else style
    if s.shape[0] == 1 and c.shape[0] > 1:
        s = s.expand(c.shape[0], -1, -1, -1)
    out = model(c, s).clamp(0.0, 1.0)
    return out[0] if squeeze else out


def count_params(component):
    """Weights plus biases of a module (transformer, decoder, SANet...)."""
    return sum(p.numel() for p in component.parameters())


def _conv_flops(cin, cout, k, h, w):
    return 2 * cin * cout * k * k * h * w


def _sanet_flops(sanet, content_hw, style_hw):
    nc = content_hw[0] * content_hw[1]
    ns = style_hw[0] * style_hw[1]
    c, d = sanet.f.in_channels, sanet.f.out_channels
    proj = 2 * c * d * (nc + 2 * ns)
    attn = 2 * nc * ns * d * 2
    return proj + attn + 2 * d * c * nc


def count_flops(component, input_hw, style_hw=None):
    """FLOPs as 2 x multiply-accumulates of convs and attention products.

    ``input_hw`` is the *image* size; feature sizes follow from the encoder
    strides. Normalisation, softmax, activations and resampling are ignored.
    """
    h, w = input_hw
    sh, sw = style_hw or input_hw
    if isinstance(component, Transformer):
        f4, f5 = (h // 8, w // 8), (h // 16, w // 16)
        s4, s5 = (sh // 8, sw // 8), (sh // 16, sw // 16)
        return (
            _sanet_flops(component.sanet4, f4, s4)
            + _sanet_flops(component.sanet5, f5, s5)
            + _conv_flops(512, 512, 3, *f4)
        )
    if isinstance(component, Decoder):
        fh, fw = h // 8, w // 8
        total = 0
        for cin, cout, _, up in component.spec:
            total += _conv_flops(cin, cout, 3, fh, fw)
            if up:
                fh, fw = fh * 2, fw * 2
        return total
    if isinstance(component, SANet):
        return _sanet_flops(component, input_hw, style_hw or input_hw)
    raise TypeError(f"no FLOP model for {type(component).__name__}")
