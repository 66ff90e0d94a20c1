"""Pure-numpy kernels (fallback when the compiled extension is absent).

Coordinate convention shared with the compiled twin: boxes live in
continuous "corner" coordinates where pixel (i, j) covers the unit square
[i, i+1) x [j, j+1); a continuous coordinate u is interpolated on the pixel
center lattice at u - 0.5.  Neighbours outside the array contribute zero to
ROIAlign samples; the paste kernel clamps instead so masks reach the box rim.
"""

from __future__ import annotations

import numpy as np


def _axis_samples(lo: float, hi: float, count: int, n: int, limit: int):
    """Lattice coords + bilinear weights for count*n samples along one axis."""
    step = (hi - lo) / (count * n)
    u = lo + (np.arange(count * n, dtype=np.float64) + 0.5) * step - 0.5
    i0 = np.floor(u).astype(np.int64)
    w1 = u - i0
    w0 = 1.0 - w1
    i1 = i0 + 1
    w0 = np.where((i0 >= 0) & (i0 < limit), w0, 0.0)
    w1 = np.where((i1 >= 0) & (i1 < limit), w1, 0.0)
    return np.clip(i0, 0, limit - 1), np.clip(i1, 0, limit - 1), w0, w1


def roi_align_forward(fm: np.ndarray, y0: float, x0: float, y1: float, x1: float,
                      out_h: int, out_w: int, samples: int) -> np.ndarray:
    """Average of samples^2 bilinear reads per output bin. fm is [C, H, W]."""
    c, h, w = fm.shape
    n = samples
    iy0, iy1, wy0, wy1 = _axis_samples(y0, y1, out_h, n, h)
    ix0, ix1, wx0, wx1 = _axis_samples(x0, x1, out_w, n, w)
    rows = fm[:, iy0, :] * wy0[None, :, None] + fm[:, iy1, :] * wy1[None, :, None]
    vals = rows[:, :, ix0] * wx0[None, None, :] + rows[:, :, ix1] * wx1[None, None, :]
    return vals.reshape(c, out_h, n, out_w, n).mean(axis=(2, 4))


def roi_align_backward(grad: np.ndarray, y0: float, x0: float, y1: float, x1: float,
                       samples: int, height: int, width: int) -> np.ndarray:
    """Scatter bin gradients back onto the [C, height, width] feature map."""
    c, oh, ow = grad.shape
    n = samples
    iy0, iy1, wy0, wy1 = _axis_samples(y0, y1, oh, n, height)
    ix0, ix1, wx0, wx1 = _axis_samples(x0, x1, ow, n, width)
    gs = np.repeat(np.repeat(grad, n, axis=1), n, axis=2) / float(n * n)
    drows = np.zeros((c, oh * n, width))
    np.add.at(drows, (slice(None), slice(None), ix0), gs * wx0[None, None, :])
    np.add.at(drows, (slice(None), slice(None), ix1), gs * wx1[None, None, :])
    dfm = np.zeros((c, height, width))
    np.add.at(dfm, (slice(None), iy0, slice(None)), drows * wy0[None, :, None])
    np.add.at(dfm, (slice(None), iy1, slice(None)), drows * wy1[None, :, None])
    return dfm


def paste_bilinear(src: np.ndarray, y0: float, x0: float, y1: float, x1: float,
                   out_h: int, out_w: int) -> np.ndarray:
    """Resize src (defined on the box grid) onto an out_h x out_w canvas.

    Output pixels whose center falls inside the box sample src bilinearly
    (edge-clamped); everything else is zero.
    """
    h, w = src.shape
    bh = (y1 - y0) / h
    bw = (x1 - x0) / w
    yc = np.arange(out_h, dtype=np.float64) + 0.5
    xc = np.arange(out_w, dtype=np.float64) + 0.5
    in_y = (yc >= y0) & (yc < y1)
    in_x = (xc >= x0) & (xc < x1)
    u = np.clip((yc - y0) / bh - 0.5, 0.0, h - 1.0)
    v = np.clip((xc - x0) / bw - 0.5, 0.0, w - 1.0)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u0 = np.minimum(u0, h - 2) if h > 1 else u0 * 0
    v0 = np.minimum(v0, w - 2) if w > 1 else v0 * 0
    au = u - u0
    av = v - v0
    u1 = np.minimum(u0 + 1, h - 1)
    v1 = np.minimum(v0 + 1, w - 1)
    rows = src[u0, :] * (1.0 - au)[:, None] + src[u1, :] * au[:, None]
    out = rows[:, v0] * (1.0 - av)[None, :] + rows[:, v1] * av[None, :]
    out *= in_y[:, None]
    out *= in_x[None, :]
    return out
