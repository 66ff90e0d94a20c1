"""Model assembly: parameter construction, tiny backbone, full forward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from aisf import autograd as ag
from aisf.attention import init_decoder_layer, init_encoder_layer
from aisf.autograd import ParameterSet, Tensor
from aisf.config import RunConfig
from aisf.decoder import AttentionRecord, decode, init_queries, queries_from_params
from aisf.encoding import BoundingBox, encode_parts
from aisf.errors import ConfigError
from aisf.invisible import init_invisible, invisible_embed
from aisf.prediction import (MaskPredictionSet, mask_loss, per_pixel_embeddings,
                             predict_masks)


def _backbone_plan(cfg: RunConfig) -> list[tuple[int, int, int]]:
    """(c_in, c_out, stride) per conv layer; 3x3 kernels, stride-4 total."""
    c = cfg.embed_dim
    mid1 = max(c // 4, 8)
    mid2 = max(c // 2, 16)
    return [(3, mid1, 2), (mid1, mid2, 2), (mid2, c, 1)]


def build_parameters(cfg: RunConfig, seed: Optional[int] = None) -> ParameterSet:
    """Create every trainable tensor for the configured model, seeded."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = ParameterSet()
    c = cfg.embed_dim

    if cfg.backbone == "conv":
        for i, (cin, cout, _) in enumerate(_backbone_plan(cfg)):
            std = float(np.sqrt(2.0 / (cin * 9)))
            params.add(f"backbone.conv{i}.w",
                       Tensor(rng.normal(0.0, std, size=(cout, cin, 3, 3))))
            params.add(f"backbone.conv{i}.b", Tensor(np.zeros(cout)))

    std_deconv = float(np.sqrt(2.0 / (c * 4)))
    params.add("deconv.w", Tensor(rng.normal(0.0, std_deconv, size=(c, c, 2, 2))))
    params.add("deconv.b", Tensor(np.zeros(c)))
    std_pw = float(np.sqrt(2.0 / c))
    params.add("pointwise.w", Tensor(rng.normal(0.0, std_pw, size=(c, c))))
    params.add("pointwise.b", Tensor(np.zeros(c)))

    for i in range(cfg.encoder_layers):
        init_encoder_layer(params, f"encoder.layer{i}", c, cfg.ffn_dim, rng)
    for i in range(cfg.decoder_layers):
        init_decoder_layer(params, f"decoder.layer{i}", c, rng,
                           cfg.ffn_dim if cfg.decoder_ffn else 0)

    init_queries(c, roles=cfg.query_roles, params=params, rng=rng)
    if cfg.invisible:
        init_invisible(params, c, rng)
    return params


def backbone_forward(image: Tensor, params: ParameterSet, cfg: RunConfig) -> Tensor:
    """Image [3,H,W] -> feature map [C, H/stride, W/stride]."""
    image = ag.as_tensor(image)
    if cfg.backbone == "identity":
        if image.shape[0] != cfg.embed_dim:
            raise ConfigError(
                f"identity backbone needs {cfg.embed_dim}-channel input, "
                f"got {image.shape[0]}")
        return image
    x = image
    last = len(_backbone_plan(cfg)) - 1
    for i, (_, _, stride) in enumerate(_backbone_plan(cfg)):
        x = ag.conv2d(x, params[f"backbone.conv{i}.w"], params[f"backbone.conv{i}.b"],
                      stride=stride, padding=1)
        if i != last:
            x = ag.relu(x)
    return x


def forward_full(feature_map: Tensor, box: BoundingBox, params: ParameterSet,
                 cfg: RunConfig, trace: Optional[list] = None
                 ) -> tuple[MaskPredictionSet, AttentionRecord]:
    """Encode -> decode -> invisible embedding -> per-pixel dot products."""
    tokens, roi_map = encode_parts(feature_map, box, params, cfg, trace)
    queries = queries_from_params(params, cfg.query_roles)
    decoded, record = decode(queries, tokens, params, heads=cfg.heads,
                             layers=cfg.decoder_layers,
                             use_layer_norm=cfg.layer_norm,
                             use_ffn=cfg.decoder_ffn, trace=trace)
    inv = None
    if cfg.invisible:
        inv = invisible_embed(decoded.q_visible, decoded.q_amodal, params)
    embeddings = per_pixel_embeddings(roi_map, tokens)
    return predict_masks(embeddings, decoded, inv), record


@dataclass
class Model:
    """A configuration plus its parameters; convenience forward/loss calls."""

    cfg: RunConfig
    params: ParameterSet

    @classmethod
    def build(cls, cfg: RunConfig, seed: Optional[int] = None) -> "Model":
        return cls(cfg=cfg, params=build_parameters(cfg, seed))

    def feature_map(self, image: Tensor) -> Tensor:
        return backbone_forward(image, self.params, self.cfg)

    def forward(self, feature_map: Tensor, box: BoundingBox,
                trace: Optional[list] = None):
        return forward_full(feature_map, box, self.params, self.cfg, trace)

    def forward_image(self, image: Tensor, box_image: BoundingBox,
                      trace: Optional[list] = None):
        fm = self.feature_map(image)
        box_fm = box_image.scaled(1.0 / self.cfg.backbone_stride)
        return self.forward(fm, box_fm, trace)

    def loss(self, pred: MaskPredictionSet, gt) -> ag.Tensor:
        return mask_loss(pred, gt)

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.params.items())
