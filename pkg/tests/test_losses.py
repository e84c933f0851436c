import pytest
import torch

from pqdast import losses
from pqdast.losses import (
    BlurDepthStub, DepthPredictorError, LossWeights, content_loss, depth_loss,
    distill_feature_loss, distill_output_loss, distill_pq_loss, distill_total,
    style_loss, temporal_loss, total_loss,
)
from helpers import relative_fd_error

G = torch.Generator().manual_seed(11)


def rand(*shape, lo=0.0, hi=1.0):
    return lo + (hi - lo) * torch.rand(*shape, generator=G, dtype=torch.float64)


def feats(c=4, h=4, w=4, layers=("relu4_1", "relu5_1")):
    return {name: torch.randn(1, c, h, w, generator=G, dtype=torch.float64) for name in layers}


# -- finite-difference gradients (float64, <= 4x4x4 tensors) ----------------

def test_grad_distill_feature():
    target = rand(1, 4, 4, 4)
    assert relative_fd_error(lambda x: distill_feature_loss(x, target), rand(1, 4, 4, 4)) < 1e-3


def test_grad_distill_output():
    target = rand(1, 3, 4, 4)
    assert relative_fd_error(lambda x: distill_output_loss(x, target), rand(1, 3, 4, 4)) < 1e-3


def test_grad_distill_pq():
    teacher = rand(1, 3, 4, 4, lo=0.1, hi=0.9)
    student = rand(1, 3, 4, 4, lo=0.1, hi=0.9)
    assert relative_fd_error(lambda x: distill_pq_loss(x, teacher), student) < 1e-3


def test_grad_content():
    target = feats()
    start = feats()

    def fn(x):
        return content_loss({"relu4_1": x, "relu5_1": start["relu5_1"]}, target)

    assert relative_fd_error(fn, start["relu4_1"]) < 1e-3


def test_grad_style():
    target = feats(layers=("relu1_1", "relu2_1"))
    other = feats(layers=("relu2_1",))["relu2_1"]

    def fn(x):
        return style_loss({"relu1_1": x, "relu2_1": other}, target)

    assert relative_fd_error(fn, feats(layers=("relu1_1",))["relu1_1"]) < 1e-3


def test_grad_depth():
    content = rand(1, 3, 4, 4)
    stub = BlurDepthStub(sigma=1.0)
    assert relative_fd_error(lambda x: depth_loss(x, content, stub), rand(1, 3, 4, 4)) < 1e-3


def test_grad_temporal():
    prev = rand(1, 3, 4, 4)
    flow = torch.full((1, 2, 4, 4), 0.3, dtype=torch.float64)
    flow[:, 1] = -0.2
    occ = torch.zeros(1, 4, 4, dtype=torch.bool)
    occ[0, 0, 0] = True
    assert relative_fd_error(lambda x: temporal_loss(x, prev, flow, occ), rand(1, 3, 4, 4)) < 1e-3


def test_grad_total():
    target = rand(1, 3, 4, 4)

    def fn(x):
        terms = {"distill": distill_output_loss(x, target), "temporal": (x - target).abs().mean()}
        return total_loss(terms).total

    assert relative_fd_error(fn, rand(1, 3, 4, 4)) < 1e-3


# -- identities ------------------------------------------------------------

def test_identities_are_exactly_zero():
    x = rand(2, 3, 8, 8)
    f = feats(c=8, h=4, w=4, layers=("relu1_1", "relu4_1", "relu5_1"))
    assert distill_feature_loss(f["relu4_1"], f["relu4_1"].clone()).item() == 0
    assert distill_output_loss(x, x.clone()).item() == 0
    assert distill_pq_loss(x, x.clone()).item() == 0
    assert content_loss(f, {k: v.clone() for k, v in f.items()}).item() == 0
    assert style_loss(f, {k: v.clone() for k, v in f.items()}).item() == 0
    assert depth_loss(x, x.clone(), BlurDepthStub()).item() == 0
    assert temporal_loss(x, x.clone(), torch.zeros(2, 2, 8, 8, dtype=x.dtype)).item() == 0


def test_identity_gradients_finite():
    x = rand(1, 3, 8, 8)
    y = x.clone().requires_grad_(True)
    f = {"relu4_1": x[:, :, :4, :4].clone(), "relu5_1": x[:, :, 4:, 4:].clone()}
    g = {k: v.clone().requires_grad_(True) for k, v in f.items()}
    total = distill_pq_loss(y, x) + content_loss(g, f) + style_loss(g, f)
    total.backward()
    assert torch.isfinite(y.grad).all()
    assert all(torch.isfinite(v.grad).all() for v in g.values())


def test_total_loss_paper_weights():
    one = torch.tensor(1.0, dtype=torch.float64)
    terms = {k: one for k in ("content", "style", "distill", "depth", "temporal")}
    report = total_loss(terms, LossWeights(1.0, 3.0, 1.0, 1.0, 10.0))
    assert abs(report.total.item() - 16.0) < 1e-9


def test_total_loss_parts_reported_not_summed():
    terms = {"distill_feat": torch.tensor(5.0), "distill": torch.tensor(2.0)}
    report = total_loss(terms)
    assert report.total.item() == 2.0
    assert report.columns() == ["distill_feat", "distill", "total"]
    assert report.values()["distill_feat"] == 5.0


def test_zero_weight_drops_gradient():
    x = rand(1, 3, 4, 4).requires_grad_(True)
    report = total_loss({"content": x.sum(), "style": (2 * x).sum()}, LossWeights(style=0.0))
    report.total.backward()
    assert torch.equal(x.grad, torch.ones_like(x))
    assert "style" in report.values()


def test_total_loss_rejects_unknown_terms_and_negative_weights():
    with pytest.raises(ValueError):
        total_loss({"perceptual": torch.tensor(1.0)})
    with pytest.raises(ValueError):
        LossWeights(temporal=-1.0)


def test_distill_total_skips_missing():
    a, b = torch.tensor(1.0), torch.tensor(2.0)
    assert distill_total(a, b, None).item() == 3.0
    assert distill_total(a, b, torch.tensor(0.5)).item() == 3.5


# -- term-specific behaviour ----------------------------------------------------

def test_style_loss_euclidean_norms():
    a = {"relu1_1": torch.zeros(1, 2, 2, 2)}
    b = {"relu1_1": torch.zeros(1, 2, 2, 2)}
    b["relu1_1"][0, 0] = 3.0
    b["relu1_1"][0, 1] = 4.0
    # mean difference (3, 4) -> 5; both constant so std difference is 0
    assert abs(style_loss(a, b).item() - 5.0) < 1e-6


def test_style_loss_layer_mismatch():
    with pytest.raises(ValueError):
        style_loss(feats(layers=("relu1_1",)), feats(layers=("relu2_1",)))


def test_content_loss_ignores_affine_changes():
    f = feats()
    g = {k: 3 * v + 1 for k, v in f.items()}
    assert content_loss(g, f).item() < 1e-12


def test_pq_loss_clamps_inputs():
    t = rand(1, 3, 8, 8)
    s = t.clone()
    s[0, 0, 0, 0] = 1.7
    assert torch.isfinite(distill_pq_loss(s, t))


def test_depth_loss_detaches_content():
    content = rand(1, 3, 8, 8).requires_grad_(True)
    stylized = rand(1, 3, 8, 8).requires_grad_(True)
    depth_loss(stylized, content, BlurDepthStub()).backward()
    assert content.grad is None and stylized.grad is not None


@pytest.mark.parametrize("bad", [
    lambda x: (_ for _ in ()).throw(RuntimeError("boom")),
    lambda x: torch.zeros(x.shape[0], 1, 3, 3, dtype=x.dtype),
    lambda x: torch.full((x.shape[0], 1, *x.shape[-2:]), float("nan"), dtype=x.dtype),
])
def test_depth_predictor_failures(bad):
    x = rand(1, 3, 8, 8)
    with pytest.raises(DepthPredictorError):
        depth_loss(x, x, bad)


def test_blur_stub_is_deterministic_and_shaped():
    stub = BlurDepthStub()
    x = rand(2, 3, 8, 8)
    assert stub(x).shape == (2, 1, 8, 8)
    assert torch.equal(stub(x), stub(x))
    flat = torch.full((1, 3, 8, 8), 0.25, dtype=torch.float64)
    assert torch.allclose(stub(flat), torch.full((1, 1, 8, 8), 0.25, dtype=torch.float64))


def test_temporal_loss_integer_shift_is_zero():
    prev = rand(1, 3, 8, 8)
    cur = torch.roll(prev, shifts=2, dims=-1)
    flow = torch.zeros(1, 2, 8, 8, dtype=torch.float64)
    flow[:, 0] = 2.0
    # the last two columns move out of frame and are excluded automatically
    assert temporal_loss(cur, prev, flow).item() < 1e-12


def test_temporal_loss_masks_occlusions_and_empty_mask():
    prev = rand(1, 3, 4, 4)
    cur = prev.clone()
    cur[..., 0, 0] += 1.0
    flow = torch.zeros(1, 2, 4, 4, dtype=torch.float64)
    occ = torch.zeros(1, 4, 4, dtype=torch.bool)
    occ[0, 0, 0] = True
    assert temporal_loss(cur, prev, flow, occ).item() == 0
    assert temporal_loss(cur, prev, flow, torch.ones(1, 4, 4, dtype=torch.bool)).item() == 0
    assert abs(temporal_loss(cur, prev, flow).item() - 1.0 / 16) < 1e-12


def test_term_order_is_stable():
    assert losses.TERM_ORDER[0] == "content" and losses.TERM_ORDER[-1] == "temporal"
