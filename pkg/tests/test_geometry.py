import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from arcnet import _resample_py, geometry
from arcnet.geometry import to_cartesian, to_polar


def blobs(H, W, angle=0.0, seed=3):
    """Analytic sum of off-center Gaussians, optionally rotated about the grid center."""
    rng = np.random.default_rng(seed)
    cy, cx = geometry.grid_center(H, W)
    r_max = geometry.max_radius(H, W)
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    dy, dx = yy - cy, xx - cx
    c, s = math.cos(angle), math.sin(angle)
    # inverse rotation of the evaluation point
    ux = c * dx + s * dy
    uy = -s * dx + c * dy
    img = np.zeros((H, W))
    for _ in range(6):
        rad = rng.uniform(0.1, 0.7) * r_max
        phi = rng.uniform(0, 2 * np.pi)
        sigma = rng.uniform(0.12, 0.25) * r_max
        by, bx = rad * math.sin(phi), rad * math.cos(phi)
        img += rng.uniform(0.3, 1.0) * np.exp(-((uy - by) ** 2 + (ux - bx) ** 2) / (2 * sigma**2))
    return img


def test_constant_image_is_preserved():
    out = to_polar(np.full((40, 40), 7.0), 20, 16)
    np.testing.assert_allclose(out, 7.0, atol=1e-12)


def test_full_size_shapes():
    out = to_polar(np.zeros((3, 352, 352)), 176, 224)
    assert out.shape == (3, 176, 224)
    back = to_cartesian(out, 352, 352)
    assert back.shape == (3, 352, 352)


def test_to_polar_matches_map_coordinates():
    H, W, rho, theta = 50, 60, 24, 32
    img = np.random.default_rng(0).random((H, W))
    cy, cx = (H - 1) / 2, (W - 1) / 2
    r_max = min(H, W) / 2 - 1
    expected = np.empty((rho, theta))
    for r in range(rho):
        for j in range(theta):
            R = r * r_max / (rho - 1)
            phi = 2 * math.pi * j / theta
            expected[r, j] = ndimage.map_coordinates(
                img, [[cy + R * math.sin(phi)], [cx + R * math.cos(phi)]], order=1
            )[0]
    np.testing.assert_allclose(to_polar(img, rho, theta), expected, atol=1e-12)


def test_radius_zero_row_replicates_center():
    img = np.random.default_rng(1).random((9, 9))
    out = to_polar(img, 5, 12)
    np.testing.assert_allclose(out[0], img[4, 4])


@pytest.mark.parametrize("k", [1, 5, 37, 112, 200])
def test_rotation_is_column_shift(k):
    H = W = 352
    base = blobs(H, W)
    rotated = blobs(H, W, angle=2 * np.pi * k / 224)
    p0 = to_polar(base, 176, 224)
    p1 = to_polar(rotated, 176, 224)
    mae = np.abs(p1 - np.roll(p0, k, axis=1)).mean()
    assert mae <= 1e-3 * (base.max() - base.min())


def test_rotate_matches_analytic_rotation():
    base = blobs(120, 120)
    angle = 2 * np.pi * 17 / 224
    ours = geometry.rotate(base, angle)
    truth = blobs(120, 120, angle=angle)
    inner = np.hypot(*np.mgrid[-59.5:60.5, -59.5:60.5]) < 55
    assert np.abs(ours - truth)[inner].max() < 5e-3


def test_round_trip_inside_disc():
    img = blobs(352, 352)
    back = to_cartesian(to_polar(img, 176, 224), 352, 352)
    yy, xx = np.mgrid[0:352, 0:352]
    r = np.hypot(yy - 175.5, xx - 175.5)
    disc = r <= geometry.max_radius(352, 352) - 1
    mae = np.abs(back - img)[disc].mean()
    assert mae <= 0.02 * (img.max() - img.min())


def test_zero_polar_gives_zero_cartesian():
    assert not to_cartesian(np.zeros((10, 16)), 30, 30).any()


def test_column_impulse_draws_a_ray():
    rho, theta, H, W, j = 20, 32, 61, 61, 5
    polar = np.zeros((rho, theta))
    polar[:, j] = 1.0
    out = to_cartesian(polar, H, W)
    cy, cx = (H - 1) / 2, (W - 1) / 2
    r_max = min(H, W) / 2 - 1
    expected = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            if math.hypot(y - cy, x - cx) > r_max:
                continue
            phi = math.atan2(y - cy, x - cx) % (2 * math.pi)
            d = phi * theta / (2 * math.pi) - j
            d = (d + theta / 2) % theta - theta / 2
            expected[y, x] = max(0.0, 1.0 - abs(d))
    np.testing.assert_allclose(out, expected, atol=1e-12)
    # brightest pixels sit along the requested angle
    ray = 25
    phi = 2 * math.pi * j / theta
    assert out[round(cy + ray * math.sin(phi)), round(cx + ray * math.cos(phi))] > 0.5


def test_angular_wrap_gives_radial_symmetry():
    rho, theta, H, W = 30, 40, 64, 64
    profile = np.sin(np.linspace(0, 3, rho)) + 2
    out = to_cartesian(np.tile(profile[:, None], (1, theta)), H, W)
    r_idx, _ = geometry.cartesian_coords(rho, theta, H, W)
    inside = ~np.isnan(r_idx)
    expected = np.interp(r_idx[inside], np.arange(rho), profile)
    dyn = profile.max() - profile.min()
    assert np.abs(out.ravel()[inside] - expected).max() <= 1e-3 * dyn


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
    img=arrays(np.float64, (2, 9, 11), elements=st.floats(-10, 10)),
    other=arrays(np.float64, (2, 9, 11), elements=st.floats(-10, 10)),
)
def test_to_polar_is_linear(a, b, img, other):
    lhs = to_polar(a * img + b * other, 5, 8)
    rhs = a * to_polar(img, 5, 8) + b * to_polar(other, 5, 8)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(-3, 3),
    img=arrays(np.float64, (6, 10), elements=st.floats(-10, 10)),
    other=arrays(np.float64, (6, 10), elements=st.floats(-10, 10)),
)
def test_to_cartesian_is_linear(a, img, other):
    lhs = to_cartesian(a * img + other, 12, 13)
    rhs = a * to_cartesian(img, 12, 13) + to_cartesian(other, 12, 13)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def _fd_gradient(fn, x, h=1e-6):
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fn(xp) - fn(xm)) / (2 * h)
    return grad


def _rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


def test_to_polar_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(8, 8))
    g = rng.normal(size=(6, 10))
    fd = _fd_gradient(lambda v: float((g * to_polar(v, 6, 10)).sum()), x)
    assert _rel_err(geometry.to_polar_adjoint(g, 8, 8), fd) <= 1e-4


def test_to_cartesian_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(8, 8))
    g = rng.normal(size=(8, 8))
    fd = _fd_gradient(lambda v: float((g * to_cartesian(v, 8, 8)).sum()), x)
    assert _rel_err(geometry.to_cartesian_adjoint(g, 8, 8), fd) <= 1e-4


@pytest.mark.parametrize("mode_y,mode_x", [(0, 0), (1, 2), (2, 1), (0, 2)])
def test_backends_agree(mode_y, mode_x):
    rng = np.random.default_rng(6)
    src = rng.normal(size=(3, 7, 9))
    ys = rng.uniform(-2, 9, 500)
    xs = rng.uniform(-2, 11, 500)
    ys[::17] = np.nan
    ref = _resample_py.sample(src, ys, xs, mode_y, mode_x)
    got = geometry._kernels.sample(src, ys, xs, mode_y, mode_x)
    np.testing.assert_allclose(got, ref, atol=1e-12)
    g = rng.normal(size=(3, 500))
    np.testing.assert_allclose(
        geometry._kernels.sample_adjoint(g, ys, xs, 7, 9, mode_y, mode_x),
        _resample_py.sample_adjoint(g, ys, xs, 7, 9, mode_y, mode_x),
        atol=1e-12,
    )


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        to_polar(np.zeros((8, 8)), 0, 8)
    with pytest.raises(ValueError):
        to_polar(np.zeros((8, 8)), 4, 1)
    with pytest.raises(ValueError):
        to_polar(np.full((8, 8), np.nan), 4, 8)
    with pytest.raises(ValueError):
        to_cartesian(np.zeros((4, 8)), 1, 8)
    with pytest.raises(ValueError):
        to_cartesian(np.array([[np.inf, 0.0]]), 4, 4)
