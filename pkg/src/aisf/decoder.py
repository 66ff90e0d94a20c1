"""Mask query decoding: self-attention over the learnable queries, then
cross-attention from queries to the encoded ROI tokens."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from aisf import autograd as ag
from aisf.attention import feed_forward, multi_head_attention, _maybe_norm
from aisf.autograd import ParameterSet, Tensor
from aisf.encoding import EncodedTokens, positional_encoding
from aisf.errors import ConfigError, DimensionError

ROLE_ORDER = ("occluder", "visible", "amodal")


@dataclass
class MaskQuerySet:
    """The active mask queries, each a length-C vector, in fixed role order."""

    roles: tuple[str, ...]
    tensors: dict[str, Tensor]

    def __post_init__(self):
        if "amodal" not in self.roles:
            raise ConfigError("the amodal query is mandatory")
        if tuple(r for r in ROLE_ORDER if r in self.roles) != self.roles:
            raise ConfigError(f"query roles {self.roles} out of canonical order")

    @property
    def dim(self) -> int:
        return self.tensors[self.roles[0]].shape[0]

    def get(self, role: str) -> Tensor:
        return self.tensors[role]

    @property
    def q_occluder(self) -> Optional[Tensor]:
        return self.tensors.get("occluder")

    @property
    def q_visible(self) -> Optional[Tensor]:
        return self.tensors.get("visible")

    @property
    def q_amodal(self) -> Tensor:
        return self.tensors["amodal"]

    @property
    def rows(self) -> Tensor:
        """Queries stacked one per row, [n_queries, C]."""
        return ag.concat([ag.reshape(self.tensors[r], (1, -1)) for r in self.roles],
                         axis=0)

    @property
    def stacked(self) -> Tensor:
        """Column-stacked view, [C, n_queries]."""
        return ag.transpose(self.rows)


@dataclass
class AttentionRecord:
    """Cross-attention weights per query over ROI tokens, [n_queries, tokens]."""

    cross_attention_weights: Tensor
    roles: tuple[str, ...]
    grid_h: int
    grid_w: int

    def map_for(self, role: str) -> np.ndarray:
        idx = self.roles.index(role)
        return self.cross_attention_weights.data[idx].reshape(self.grid_h, self.grid_w)


def init_queries(c: int, rng_seed: int = 0, roles: tuple[str, ...] = ROLE_ORDER,
                 params: Optional[ParameterSet] = None,
                 rng: Optional[np.random.Generator] = None) -> MaskQuerySet:
    """Draw the learnable queries i.i.d. Gaussian (mean 0, std 0.02)."""
    if c <= 0:
        raise ConfigError(f"query dim must be positive, got {c}")
    if rng is None:
        rng = np.random.default_rng(rng_seed)
    tensors = {}
    for role in ROLE_ORDER:
        if role in roles:
            t = Tensor(rng.normal(0.0, 0.02, size=c), requires_grad=True)
            if params is not None:
                params.add(f"queries.{role}", t)
            tensors[role] = t
    return MaskQuerySet(tuple(r for r in ROLE_ORDER if r in roles), tensors)


def queries_from_params(params: ParameterSet, roles: tuple[str, ...]) -> MaskQuerySet:
    return MaskQuerySet(roles, {r: params[f"queries.{r}"] for r in roles})


def decode(queries: MaskQuerySet, tokens: EncodedTokens, params: ParameterSet,
           heads: int = 1, layers: int = 1, use_layer_norm: bool = True,
           use_ffn: bool = False, trace: Optional[list] = None
           ) -> tuple[MaskQuerySet, AttentionRecord]:
    """One (or more) decoder blocks over the query set.

    Each block: queries self-attend with a residual, then cross-attend to
    the ROI tokens (keys carry the positional grid, values do not), again
    with a residual; layer norm follows each residual when enabled.
    """
    if tokens.channels != queries.dim:
        raise DimensionError(
            f"token channels {tokens.channels} != query dim {queries.dim}")
    pos = positional_encoding(tokens.grid_h, tokens.grid_w, tokens.channels)
    feats = ag.transpose(tokens.tokens)             # [T, C]
    keys = ag.transpose(ag.add(tokens.tokens, Tensor(pos)))
    x = queries.rows                                # [n, C]
    cross_weights = None
    for layer in range(layers):
        prefix = f"decoder.layer{layer}"
        self_out, _ = multi_head_attention(x, x, x, params, f"{prefix}.self",
                                           heads, trace)
        x = _maybe_norm(ag.add(self_out, x), params, f"{prefix}.ln1", use_layer_norm)
        cross_out, cross_weights = multi_head_attention(
            x, keys, feats, params, f"{prefix}.cross", heads, trace)
        x = _maybe_norm(ag.add(cross_out, x), params, f"{prefix}.ln2", use_layer_norm)
        if use_ffn:
            x = _maybe_norm(ag.add(feed_forward(x, params, f"{prefix}.ffn"), x),
                            params, f"{prefix}.ln3", use_layer_norm)
    out_tensors = {role: ag.reshape(ag.narrow(x, 0, i, 1), (-1,))
                   for i, role in enumerate(queries.roles)}
    record = AttentionRecord(cross_weights, queries.roles,
                             tokens.grid_h, tokens.grid_w)
    return MaskQuerySet(queries.roles, out_tensors), record
