"""Convolutional building blocks shared by the Cartesian and polar branches.

Feature grids are ``(B, C, H, W)`` tensors. Polar grids put the radius on ``H``
and the angle (A-lines) on ``W``; ``circular_theta`` padding wraps ``W`` only.
"""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from arcnet import geometry

PADDING_MODES = ("zero", "circular_theta")


def circular_pad_theta(x, pad):
    """Wrap ``pad`` columns around the last axis and zero-pad the radial axis."""
    if pad < 0:
        raise ValueError("pad must be >= 0")
    if pad == 0:
        return x
    if pad >= x.shape[-1]:
        raise ValueError(f"pad={pad} must be smaller than the angular size {x.shape[-1]}")
    x = torch.cat([x[..., -pad:], x, x[..., :pad]], dim=-1)
    return F.pad(x, (0, 0, pad, pad))


class Conv(nn.Module):
    """Square convolution with 'same'-style padding in either padding mode."""

    def __init__(self, in_channels, out_channels, kernel=3, stride=1,
                 padding_mode="zero", bias=True):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if padding_mode not in PADDING_MODES:
            raise ValueError(f"unknown padding mode {padding_mode!r}")
        self.pad = kernel // 2
        self.padding_mode = padding_mode
        self.conv = nn.Conv2d(in_channels, out_channels, kernel, stride=stride,
                              padding=0, bias=bias)

    def forward(self, x):
        if self.padding_mode == "circular_theta":
            x = circular_pad_theta(x, self.pad)
        elif self.pad:
            x = F.pad(x, (self.pad,) * 4)
        return self.conv(x)


class ResidualBlock(nn.Module):
    """Two 3x3 conv-BN stages plus a shortcut, ReLU after the sum.

    Downsampling (stride 2 on both spatial axes) happens in the first
    convolution and in the 1x1 projection shortcut.
    """

    def __init__(self, in_channels, out_channels, stride=1, padding_mode="zero"):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.conv1 = Conv(in_channels, out_channels, 3, stride, padding_mode, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = Conv(out_channels, out_channels, 3, 1, padding_mode, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


def interp_matrix(n_in, n_out, circular):
    """Dense ``(n_out, n_in)`` linear-interpolation matrix.

    Origin-aligned: output index ``i`` sits at input position ``i * n_in / n_out``,
    which keeps polar column 0 at angle 0 on every grid.
    """
    pos = np.arange(n_out) * (n_in / n_out)
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    hi = lo + 1
    if circular:
        lo %= n_in
        hi %= n_in
    else:
        lo = np.clip(lo, 0, n_in - 1)
        hi = np.clip(hi, 0, n_in - 1)
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.arange(n_out), lo), 1 - frac)
    np.add.at(mat, (np.arange(n_out), hi), frac)
    return torch.from_numpy(mat)


def upsample(x, target_h, target_w, circular=True):
    """Bilinear upsampling; the angular (last) axis wraps when ``circular``."""
    h, w = x.shape[-2:]
    if target_h < h or target_w < w:
        raise ValueError(f"cannot upsample {h}x{w} to smaller {target_h}x{target_w}")
    if (target_h, target_w) == (h, w):
        return x
    rows = interp_matrix(h, target_h, circular=False).to(x.dtype)
    cols = interp_matrix(w, target_w, circular).to(x.dtype)
    return rows @ x @ cols.T


def upsample_alines(logits, theta):
    """Circular linear upsampling of ``(B, theta_in, n_classes)`` along the A-line axis."""
    n = logits.shape[-2]
    if theta < n:
        raise ValueError("cannot shrink the A-line axis")
    if theta == n:
        return logits
    return interp_matrix(n, theta, circular=True).to(logits.dtype) @ logits


class ProjectPool(nn.Module):
    """1x1 projection to class scores, then mean over the radial axis."""

    def __init__(self, in_channels, n_classes):
        super().__init__()
        if n_classes < 2:
            raise ValueError("need at least 2 classes")
        self.proj = nn.Conv2d(in_channels, n_classes, 1)

    def forward(self, x):
        # (B, n_classes, rho, theta) -> (B, theta, n_classes)
        return self.proj(x).mean(dim=2).transpose(1, 2)


class _TableResample(torch.autograd.Function):
    """Compiled gather/scatter for a fixed resampling table."""

    @staticmethod
    def forward(ctx, x, idx, w, n_src):
        ctx.save_for_backward(idx, w)
        ctx.n_src = n_src
        src = x.detach().contiguous()
        out = torch.empty(src.shape[0], idx.shape[0], dtype=x.dtype)
        geometry._kernels.apply_table(src.numpy(), idx.numpy(), w.numpy(), out.numpy())
        return out

    @staticmethod
    def backward(ctx, grad):
        idx, w = ctx.saved_tensors
        grad = grad.contiguous()
        out = torch.zeros(grad.shape[0], ctx.n_src, dtype=grad.dtype)
        geometry._kernels.apply_table_adjoint(grad.numpy(), idx.numpy(), w.numpy(), out.numpy())
        return out, None, None, None


class Warp(nn.Module):
    """Fixed bilinear resampling between grid layouts, applied channel-wise.

    Built from the same sampling tables as :mod:`arcnet.geometry`, so it is the
    tensor twin of ``to_polar`` / ``to_cartesian``; gradients flow through the
    gather.
    """

    def __init__(self, kind, src_hw, dst_hw):
        super().__init__()
        if kind == "to_polar":
            idx, w = geometry.polar_table(*src_hw, *dst_hw)
        elif kind == "to_cartesian":
            idx, w = geometry.cartesian_table(*src_hw, *dst_hw)
        else:
            raise ValueError(f"unknown warp {kind!r}")
        self.kind = kind
        self.src_hw = tuple(src_hw)
        self.dst_hw = tuple(dst_hw)
        self.register_buffer("idx", torch.from_numpy(idx), persistent=False)
        self.register_buffer("w", torch.from_numpy(w), persistent=False)
        self.compiled = geometry.BACKEND == "cython"

    def forward(self, x):
        if tuple(x.shape[-2:]) != self.src_hw:
            raise ValueError(f"{self.kind} expects {self.src_hw}, got {tuple(x.shape[-2:])}")
        B, C = x.shape[:2]
        if self.compiled and x.device.type == "cpu" and self.w.dtype == torch.float64:
            n_src = self.src_hw[0] * self.src_hw[1]
            out = _TableResample.apply(x.reshape(B * C, n_src), self.idx, self.w, n_src)
        else:
            flat = x.reshape(B, C, -1)
            vals = flat[:, :, self.idx.reshape(-1)].reshape(B, C, -1, 4)
            out = (vals * self.w.to(x.dtype)).sum(-1)
        return out.reshape(B, C, *self.dst_hw)

    def extra_repr(self):
        return f"{self.kind}, {self.src_hw} -> {self.dst_hw}"
