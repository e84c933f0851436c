import numpy as np
import torch
from hypothesis import given, strategies as st

from pqdast.colorspace import linear_to_srgb, srgb_to_linear


def reference_srgb_to_linear(c):
    return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4


def test_fixed_points_exact():
    for x in (0.0, 1.0):
        assert srgb_to_linear(np.float64(x)) == x
        assert linear_to_srgb(np.float64(x)) == x
        assert float(srgb_to_linear(torch.tensor(x))) == x
        assert float(linear_to_srgb(torch.tensor(x))) == x


def test_breakpoint():
    assert abs(float(linear_to_srgb(np.float64(0.0031308))) - 0.04045) < 1e-6


def test_matches_scalar_formula():
    grid = np.linspace(0, 1, 257)
    expected = np.array([reference_srgb_to_linear(c) for c in grid])
    np.testing.assert_allclose(srgb_to_linear(grid), expected, rtol=0, atol=1e-12)


def test_round_trip_grid():
    grid = np.linspace(0, 1, 1024)
    assert np.abs(srgb_to_linear(linear_to_srgb(grid)) - grid).max() < 1e-6
    assert np.abs(linear_to_srgb(srgb_to_linear(grid)) - grid).max() < 1e-6
    g32 = torch.linspace(0, 1, 1024)
    assert (linear_to_srgb(srgb_to_linear(g32)) - g32).abs().max() < 1e-6


def test_out_of_range_clamped():
    assert float(srgb_to_linear(np.float64(-0.5))) == 0.0
    assert float(linear_to_srgb(np.float64(2.0))) == 1.0


@given(st.floats(0, 1), st.floats(0, 1))
def test_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert srgb_to_linear(np.float64(lo)) <= srgb_to_linear(np.float64(hi))
    assert linear_to_srgb(np.float64(lo)) <= linear_to_srgb(np.float64(hi))


def test_preserves_type_and_shape():
    x = torch.rand(2, 3, 4, 5)
    y = linear_to_srgb(x)
    assert torch.is_tensor(y) and y.shape == x.shape and y.dtype == x.dtype
    assert isinstance(srgb_to_linear(x.numpy()), np.ndarray)
