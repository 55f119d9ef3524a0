"""Pure numpy fallback for the compiled sampling kernels in ``_resample.pyx``.

Same signatures and axis-mode conventions: 0 = zero outside, 1 = clamp, 2 = wrap;
NaN coordinates yield 0.
"""

import numpy as np


def _neighbours(ys, xs, H, W, mode_y, mode_x):
    masked = np.isnan(ys) | np.isnan(xs)
    y = np.where(masked, 0.0, ys)
    x = np.where(masked, 0.0, xs)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    fy = y - y0
    fx = x - x0

    def fix(i, n, mode):
        if mode == 2:
            return np.mod(i, n), np.ones(i.shape, bool)
        if mode == 1:
            return np.clip(i, 0, n - 1), np.ones(i.shape, bool)
        ok = (i >= 0) & (i < n)
        return np.where(ok, i, 0), ok

    ya, oka = fix(y0, H, mode_y)
    yb, okb = fix(y0 + 1, H, mode_y)
    xa, okc = fix(x0, W, mode_x)
    xb, okd = fix(x0 + 1, W, mode_x)
    keep = ~masked
    idx = np.stack([ya * W + xa, ya * W + xb, yb * W + xa, yb * W + xb], axis=-1)
    w = np.stack(
        [
            (1 - fy) * (1 - fx) * (oka & okc),
            (1 - fy) * fx * (oka & okd),
            fy * (1 - fx) * (okb & okc),
            fy * fx * (okb & okd),
        ],
        axis=-1,
    )
    w *= keep[:, None]
    return idx, w


def sample(src, ys, xs, mode_y=0, mode_x=0):
    M, H, W = src.shape
    idx, w = _neighbours(ys, xs, H, W, mode_y, mode_x)
    flat = src.reshape(M, H * W)
    return np.einsum("mnk,nk->mn", flat[:, idx], w)


def sample_adjoint(grad, ys, xs, H, W, mode_y=0, mode_x=0):
    M = grad.shape[0]
    idx, w = _neighbours(ys, xs, H, W, mode_y, mode_x)
    out = np.zeros((M, H * W))
    contrib = grad[:, :, None] * w[None]
    for m in range(M):
        out[m] = np.bincount(idx.ravel(), weights=contrib[m].ravel(), minlength=H * W)
    return out.reshape(M, H, W)


def apply_table(src, idx, w, out):
    out[...] = np.einsum("mnk,nk->mn", src[:, idx], w)
    return out


def apply_table_adjoint(grad, idx, w, out):
    contrib = grad[:, :, None] * w[None]
    for m in range(grad.shape[0]):
        out[m] += np.bincount(idx.ravel(), weights=contrib[m].ravel(), minlength=out.shape[1])
    return out
