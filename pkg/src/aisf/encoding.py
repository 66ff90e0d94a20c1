"""ROI feature encoding: ROIAlign, upsampling, 1x1 conv, positions, encoder.

The pipeline turns a feature map plus a box into a token sequence:
align to a fixed grid, double the resolution with a stride-2 transposed
convolution, mix channels with a 1x1 convolution, flatten, add 2-d
sinusoidal positions and run the self-attention encoder block(s).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from aisf import _kernels as kernels
from aisf import autograd as ag
from aisf.attention import encoder_layer
from aisf.autograd import ParameterSet, Tensor, _accumulate, _make
from aisf.errors import ConfigError, DimensionError, InputError


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates of its feature map."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InputError(f"box must have positive extent, got {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def scaled(self, factor: float) -> "BoundingBox":
        return BoundingBox(self.x0 * factor, self.y0 * factor,
                           self.x1 * factor, self.y1 * factor)


@dataclass
class RoiFeature:
    """Per-ROI feature volume [channels, height, width]."""

    values: Tensor

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class EncodedTokens:
    """Encoded ROI tokens [channels, grid_h * grid_w], grid dims retained."""

    tokens: Tensor
    grid_h: int
    grid_w: int

    @property
    def count(self) -> int:
        return self.tokens.shape[1]

    @property
    def channels(self) -> int:
        return self.tokens.shape[0]


def roi_align(feature_map: Tensor, box: BoundingBox, out_h: int, out_w: int,
              samples_per_bin: int = 2) -> RoiFeature:
    """Bilinear ROI pooling; differentiable w.r.t. the feature map."""
    fm = ag.as_tensor(feature_map)
    if fm.data.ndim != 3:
        raise DimensionError(f"feature map must be [C,H,W], got {fm.shape}")
    if out_h <= 0 or out_w <= 0 or samples_per_bin <= 0:
        raise InputError("roi_align output dims and sample count must be positive")
    _, h, w = fm.shape
    ix0, iy0 = max(box.x0, 0.0), max(box.y0, 0.0)
    ix1, iy1 = min(box.x1, float(w)), min(box.y1, float(h))
    if ix1 - ix0 <= 0 or iy1 - iy0 <= 0:
        raise InputError(f"box {box} does not intersect the {h}x{w} feature map")
    data = np.ascontiguousarray(fm.data)
    out = kernels.roi_align_forward(data, box.y0, box.x0, box.y1, box.x1,
                                    out_h, out_w, samples_per_bin)

    def back(g):
        _accumulate(fm, kernels.roi_align_backward(
            np.ascontiguousarray(g), box.y0, box.x0, box.y1, box.x1,
            samples_per_bin, h, w))

    return RoiFeature(_make(out, (fm,), back))


def upsample_deconv(roi: RoiFeature, params: ParameterSet,
                    prefix: str = "deconv") -> RoiFeature:
    """Stride-2 transposed 2x2 convolution: doubles both spatial dims."""
    return RoiFeature(ag.deconv2x2(roi.values, params[f"{prefix}.w"],
                                   params[f"{prefix}.b"]))


def pointwise_conv(roi: RoiFeature, params: ParameterSet,
                   prefix: str = "pointwise") -> RoiFeature:
    """1x1 convolution: a per-pixel linear map across channels."""
    w = params[f"{prefix}.w"]
    b = params[f"{prefix}.b"]
    c, h, wd = roi.values.shape
    if w.shape[1] != c:
        raise DimensionError(f"pointwise weight {w.shape} does not accept {c} channels")
    flat = ag.reshape(roi.values, (c, h * wd))
    out = ag.add(ag.matmul(w, flat), ag.reshape(b, (w.shape[0], 1)))
    return RoiFeature(ag.reshape(out, (w.shape[0], h, wd)))


@lru_cache(maxsize=32)
def _positional_grid(h: int, w: int, c: int) -> np.ndarray:
    half = c // 2
    pairs = half // 2
    freqs = 1.0 / (10000.0 ** (2.0 * np.arange(pairs) / half))  # [pairs]
    ys, xs = np.divmod(np.arange(h * w), w)
    enc = np.empty((c, h * w))
    for base, pos in ((0, xs), (half, ys)):
        angles = pos[None, :] * freqs[:, None]  # [pairs, h*w]
        enc[base + 0:base + half:2] = np.sin(angles)
        enc[base + 1:base + half:2] = np.cos(angles)
    enc.setflags(write=False)
    return enc


def positional_encoding(h: int, w: int, c: int) -> np.ndarray:
    """2-d sinusoidal grid [c, h*w]: first half column index, second half row."""
    if h <= 0 or w <= 0:
        raise ConfigError(f"positional grid dims must be positive, got {h}x{w}")
    if c % 4:
        raise ConfigError(f"positional encoding needs channels divisible by 4, got {c}")
    return _positional_grid(h, w, c)


def encode_parts(feature_map: Tensor, box: BoundingBox, params: ParameterSet,
                 cfg, trace: Optional[list] = None) -> tuple[EncodedTokens, RoiFeature]:
    """Full encoding pipeline; also returns the pre-encoder ROI map."""
    roi = roi_align(feature_map, box, cfg.roi_h, cfg.roi_w, cfg.samples_per_bin)
    up = upsample_deconv(roi, params)
    pw = pointwise_conv(up, params)
    c, hm, wm = pw.values.shape
    flat = ag.reshape(pw.values, (c, hm * wm))
    pos = Tensor(positional_encoding(hm, wm, c))
    x = ag.transpose(ag.add(flat, pos))  # [tokens, channels]
    for layer in range(cfg.encoder_layers):
        x = encoder_layer(x, params, f"encoder.layer{layer}", cfg.heads,
                          cfg.layer_norm, trace)
    return EncodedTokens(ag.transpose(x), hm, wm), pw


def encode(feature_map: Tensor, box: BoundingBox, params: ParameterSet,
           cfg, trace: Optional[list] = None) -> EncodedTokens:
    return encode_parts(feature_map, box, params, cfg, trace)[0]
