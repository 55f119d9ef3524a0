"""Cartesian <-> polar resampling about the grid center with bilinear interpolation.

Conventions shared by every module in the package:

* grid center is ``((H - 1) / 2, (W - 1) / 2)``;
* polar row ``r`` sits at radius ``r * R_max / (rho - 1)`` with
  ``R_max = min(H, W) / 2 - 1``;
* polar column ``j`` is the A-line at angle ``2*pi*j / theta``, measured from
  the +x (column) axis towards +y (row) axis.

Arrays are ``(C, H, W)`` or ``(H, W)``; 2-D input gives 2-D output.
"""

import os
from functools import lru_cache

import numpy as np

ZERO, CLAMP, WRAP = 0, 1, 2

if os.environ.get("ARCNET_BACKEND", "").lower() == "python":
    from arcnet import _resample_py as _kernels

    BACKEND = "python"
else:
    try:
        from arcnet import _resample as _kernels

        BACKEND = "cython"
    except ImportError:  # extension not built
        from arcnet import _resample_py as _kernels

        BACKEND = "python"


def max_radius(H, W):
    return min(H, W) / 2.0 - 1.0


def grid_center(H, W):
    return (H - 1) / 2.0, (W - 1) / 2.0


@lru_cache(maxsize=64)
def polar_coords(H, W, rho, theta):
    """Cartesian sample positions (ys, xs), each of shape (rho * theta,)."""
    cy, cx = grid_center(H, W)
    r_max = max_radius(H, W)
    radii = np.arange(rho) * (r_max / (rho - 1)) if rho > 1 else np.zeros(1)
    angles = 2.0 * np.pi * np.arange(theta) / theta
    ys = cy + radii[:, None] * np.sin(angles)[None, :]
    xs = cx + radii[:, None] * np.cos(angles)[None, :]
    # radius 0 must hit the center pixel exactly in every column
    ys[0] = cy
    xs[0] = cx
    ys = np.ascontiguousarray(ys.ravel())
    xs = np.ascontiguousarray(xs.ravel())
    ys.flags.writeable = False
    xs.flags.writeable = False
    return ys, xs


@lru_cache(maxsize=64)
def cartesian_coords(rho, theta, H, W):
    """Fractional polar indices (r_idx, j_idx) per Cartesian pixel; NaN outside R_max."""
    cy, cx = grid_center(H, W)
    r_max = max_radius(H, W)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    dy = yy - cy
    dx = xx - cx
    radius = np.hypot(dy, dx)
    angle = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)
    r_idx = radius * ((rho - 1) / r_max) if rho > 1 else np.zeros_like(radius)
    j_idx = angle * (theta / (2.0 * np.pi))
    outside = radius > r_max
    r_idx[outside] = np.nan
    j_idx[outside] = np.nan
    r_idx = np.ascontiguousarray(r_idx.ravel())
    j_idx = np.ascontiguousarray(j_idx.ravel())
    r_idx.flags.writeable = False
    j_idx.flags.writeable = False
    return r_idx, j_idx


def _as_stack(src):
    arr = np.asarray(src, dtype=np.float64)
    if arr.ndim == 2:
        return np.ascontiguousarray(arr[None]), True
    if arr.ndim != 3:
        raise ValueError(f"expected a 2-D or 3-D grid, got shape {arr.shape}")
    return np.ascontiguousarray(arr), False


def _check_finite(arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError("grid contains non-finite values")


def to_polar(src, rho, theta):
    """Resample a Cartesian grid onto ``rho`` radii x ``theta`` angles."""
    if rho < 1:
        raise ValueError("rho must be >= 1")
    if theta < 2:
        raise ValueError("theta must be >= 2")
    stack, squeeze = _as_stack(src)
    _check_finite(stack)
    C, H, W = stack.shape
    if H < 2 or W < 2:
        raise ValueError("Cartesian grid must be at least 2x2")
    ys, xs = polar_coords(H, W, rho, theta)
    out = _kernels.sample(stack, ys, xs, ZERO, ZERO).reshape(C, rho, theta)
    return out[0] if squeeze else out


def to_cartesian(src, H, W):
    """Resample a polar grid onto an ``H x W`` Cartesian grid.

    Angles wrap between the last and first column, the radial index clamps at
    the outermost row and pixels beyond ``R_max`` are 0.
    """
    if H < 2 or W < 2:
        raise ValueError("H and W must be >= 2")
    stack, squeeze = _as_stack(src)
    _check_finite(stack)
    C, rho, theta = stack.shape
    if theta < 2:
        raise ValueError("polar grid needs at least 2 columns")
    r_idx, j_idx = cartesian_coords(rho, theta, H, W)
    out = _kernels.sample(stack, r_idx, j_idx, CLAMP, WRAP).reshape(C, H, W)
    return out[0] if squeeze else out


def to_polar_adjoint(grad, H, W):
    """Transpose of :func:`to_polar`: maps a polar cotangent to Cartesian."""
    stack, squeeze = _as_stack(grad)
    C, rho, theta = stack.shape
    ys, xs = polar_coords(H, W, rho, theta)
    out = _kernels.sample_adjoint(stack.reshape(C, -1), ys, xs, H, W, ZERO, ZERO)
    return out[0] if squeeze else out


def to_cartesian_adjoint(grad, rho, theta):
    """Transpose of :func:`to_cartesian`."""
    stack, squeeze = _as_stack(grad)
    C, H, W = stack.shape
    r_idx, j_idx = cartesian_coords(rho, theta, H, W)
    out = _kernels.sample_adjoint(
        stack.reshape(C, -1), r_idx, j_idx, rho, theta, CLAMP, WRAP
    )
    return out[0] if squeeze else out


def rotate(src, angle):
    """Rotate a Cartesian grid about its center by ``angle`` radians.

    Content at polar angle ``phi`` moves to ``phi + angle``, so a rotation by
    ``2*pi*k/theta`` shifts polar columns by ``+k``.
    """
    stack, squeeze = _as_stack(src)
    C, H, W = stack.shape
    cy, cx = grid_center(H, W)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    dy = yy - cy
    dx = xx - cx
    c, s = np.cos(angle), np.sin(angle)
    xs = cx + c * dx + s * dy
    ys = cy - s * dx + c * dy
    out = _kernels.sample(
        stack, np.ascontiguousarray(ys.ravel()), np.ascontiguousarray(xs.ravel()),
        ZERO, ZERO,
    ).reshape(C, H, W)
    return out[0] if squeeze else out


def resize(src, H, W):
    """Bilinear resize with corner-aligned sampling; used for frame ingestion."""
    stack, squeeze = _as_stack(src)
    C, h, w = stack.shape
    ys = np.linspace(0.0, h - 1.0, H)
    xs = np.linspace(0.0, w - 1.0, W)
    yy = np.repeat(ys, W)
    xx = np.tile(xs, H)
    out = _kernels.sample(stack, yy, xx, CLAMP, CLAMP).reshape(C, H, W)
    return out[0] if squeeze else out


def sampling_table(ys, xs, H, W, mode_y=ZERO, mode_x=ZERO):
    """Flat neighbour indices and weights, each ``(N, 4)``, for a fixed resampling.

    Lets tensor code apply the same bilinear map as :func:`to_polar` /
    :func:`to_cartesian` with a gather.
    """
    from arcnet._resample_py import _neighbours

    return _neighbours(np.asarray(ys), np.asarray(xs), H, W, mode_y, mode_x)


def polar_table(H, W, rho, theta):
    ys, xs = polar_coords(H, W, rho, theta)
    return sampling_table(ys, xs, H, W, ZERO, ZERO)


def cartesian_table(rho, theta, H, W):
    r_idx, j_idx = cartesian_coords(rho, theta, H, W)
    return sampling_table(r_idx, j_idx, rho, theta, CLAMP, WRAP)
