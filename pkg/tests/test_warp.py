import torch
import torch.nn.functional as F

from pqdast.warp import valid_mask, warp_to_previous
from helpers import relative_fd_error


def grid_sample_warp(frame, flow):
    _, _, h, w = frame.shape
    ys, xs = torch.meshgrid(torch.arange(h, dtype=frame.dtype), torch.arange(w, dtype=frame.dtype), indexing="ij")
    gx = 2 * (xs + flow[:, 0]) / (w - 1) - 1
    gy = 2 * (ys + flow[:, 1]) / (h - 1) - 1
    return F.grid_sample(frame, torch.stack((gx, gy), -1), mode="bilinear",
                         padding_mode="border", align_corners=True)


def test_matches_grid_sample_for_fractional_flow():
    g = torch.Generator().manual_seed(0)
    frame = torch.rand(2, 3, 9, 11, generator=g, dtype=torch.float64)
    flow = 3 * torch.randn(2, 2, 9, 11, generator=g, dtype=torch.float64)
    warped, _ = warp_to_previous(frame, flow)
    assert (warped - grid_sample_warp(frame, flow)).abs().max() < 1e-12


def test_integer_flow_is_exact():
    frame = torch.rand(1, 3, 6, 7)
    flow = torch.zeros(1, 2, 6, 7)
    flow[:, 0], flow[:, 1] = -1, 2
    warped, inside = warp_to_previous(frame, flow)
    assert torch.equal(warped[0, :, :4, 1:], frame[0, :, 2:, :-1])
    assert inside[0, :4, 1:].all() and not inside[0, 4:].any() and not inside[0, :, 0].any()


def test_valid_mask_combines_occlusion():
    flow = torch.zeros(1, 2, 4, 4)
    occ = torch.zeros(1, 4, 4, dtype=torch.bool)
    occ[0, 1, 1] = True
    mask = valid_mask(flow, occ)
    assert mask.sum() == 15 and not mask[0, 1, 1]


def test_gradients_wrt_frame_and_flow():
    g = torch.Generator().manual_seed(1)
    frame = torch.rand(1, 2, 4, 4, generator=g, dtype=torch.float64)
    flow = 0.4 + 0.2 * torch.rand(1, 2, 4, 4, generator=g, dtype=torch.float64)
    assert relative_fd_error(lambda x: warp_to_previous(x, flow)[0].square().sum(), frame) < 1e-6
    assert relative_fd_error(lambda f: warp_to_previous(frame, f)[0].square().sum(), flow) < 1e-6
