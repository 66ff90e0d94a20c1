"""Mask prediction: per-pixel ROI embeddings, dot-product mask logits, loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from aisf import autograd as ag
from aisf.autograd import Tensor
from aisf.decoder import MaskQuerySet
from aisf.encoding import EncodedTokens, RoiFeature
from aisf.errors import DimensionError, InputError
from aisf.invisible import InvisibleEmbedding

HEAD_ORDER = ("occluder", "visible", "amodal", "invisible")


@dataclass
class PerPixelEmbeddings:
    """Per-pixel feature vectors at mask resolution, [C, H_m, W_m]."""

    e_roi: Tensor


@dataclass
class MaskPredictionSet:
    """Logit and probability maps for every enabled mask head."""

    heads: tuple[str, ...]
    logits: dict[str, Tensor] = field(default_factory=dict)
    probs: dict[str, Tensor] = field(default_factory=dict)

    def prob(self, head: str) -> Tensor:
        return self.probs[head]

    @property
    def m_occluder(self) -> Optional[Tensor]:
        return self.probs.get("occluder")

    @property
    def m_visible(self) -> Optional[Tensor]:
        return self.probs.get("visible")

    @property
    def m_amodal(self) -> Tensor:
        return self.probs["amodal"]

    @property
    def m_invisible(self) -> Optional[Tensor]:
        return self.probs.get("invisible")


def per_pixel_embeddings(roi_upsampled: RoiFeature,
                         tokens: EncodedTokens) -> PerPixelEmbeddings:
    """Flatten the ROI map, add the encoded tokens, unflatten back."""
    c, h, w = roi_upsampled.values.shape
    if tokens.channels != c or tokens.count != h * w:
        raise DimensionError(
            f"tokens [{tokens.channels} x {tokens.count}] do not match "
            f"roi map {roi_upsampled.values.shape}")
    flat = ag.reshape(roi_upsampled.values, (c, h * w))
    return PerPixelEmbeddings(ag.reshape(ag.add(flat, tokens.tokens), (c, h, w)))


def predict_masks(e: PerPixelEmbeddings, queries: MaskQuerySet,
                  inv: Optional[InvisibleEmbedding] = None) -> MaskPredictionSet:
    """Dot product of each mask embedding with every pixel embedding."""
    c, h, w = e.e_roi.shape
    embeds: list[tuple[str, Tensor]] = [(r, queries.get(r)) for r in queries.roles]
    if inv is not None:
        embeds.append(("invisible", inv.i_invisible))
    for name, t in embeds:
        if t.shape != (c,):
            raise DimensionError(f"{name} embedding shape {t.shape}, expected ({c},)")
    rows = ag.concat([ag.reshape(t, (1, c)) for _, t in embeds], axis=0)
    logit_rows = ag.matmul(rows, ag.reshape(e.e_roi, (c, h * w)))
    ordered = tuple(h_ for h_ in HEAD_ORDER if h_ in {n for n, _ in embeds})
    pred = MaskPredictionSet(heads=ordered)
    for i, (name, _) in enumerate(embeds):
        logit = ag.reshape(ag.narrow(logit_rows, 0, i, 1), (h, w))
        pred.logits[name] = logit
        pred.probs[name] = ag.sigmoid(logit)
    return pred


def mask_loss(pred: MaskPredictionSet, gt: Mapping[str, np.ndarray]) -> Tensor:
    """Per-head mean binary cross-entropy on logits, heads weighted equally."""
    total = None
    for head in pred.heads:
        if head not in gt:
            raise InputError(f"missing ground truth for head {head!r}")
        target = np.asarray(gt[head])
        if not np.isin(target, (0, 1)).all():
            raise InputError(f"ground truth for {head!r} is not binary")
        term = ag.bce_with_logits(pred.logits[head], target.astype(np.float64))
        total = term if total is None else ag.add(total, term)
    return total


def head_losses(pred: MaskPredictionSet, gt: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    """Same BCE terms as mask_loss, kept separate for logging."""
    out = {}
    for head in pred.heads:
        target = np.asarray(gt[head])
        if not np.isin(target, (0, 1)).all():
            raise InputError(f"ground truth for {head!r} is not binary")
        out[head] = ag.bce_with_logits(pred.logits[head], target.astype(np.float64))
    return out
