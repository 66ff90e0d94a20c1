"""Invisible-mask embedding: MLP over the concatenated visible and amodal
query embeddings (two ReLU hidden layers, linear output)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from aisf import autograd as ag
from aisf.attention import init_linear, linear
from aisf.autograd import ParameterSet, Tensor
from aisf.errors import DimensionError


@dataclass
class InvisibleEmbedding:
    i_invisible: Tensor

    @property
    def dim(self) -> int:
        return self.i_invisible.shape[0]


def init_invisible(params: ParameterSet, c: int, rng: np.random.Generator,
                   prefix: str = "invisible") -> None:
    init_linear(params, f"{prefix}.fc1", 2 * c, c, rng)
    init_linear(params, f"{prefix}.fc2", c, c, rng)
    init_linear(params, f"{prefix}.fc3", c, c, rng)


def invisible_embed(q_visible: Tensor, q_amodal: Tensor, params: ParameterSet,
                    prefix: str = "invisible") -> InvisibleEmbedding:
    if q_visible.data.ndim != 1 or q_visible.shape != q_amodal.shape:
        raise DimensionError(
            f"queries must be equal-length vectors, got {q_visible.shape} "
            f"and {q_amodal.shape}")
    c = q_visible.shape[0]
    joint = ag.reshape(ag.concat([q_visible, q_amodal], axis=0), (1, 2 * c))
    hidden = ag.relu(linear(joint, params, f"{prefix}.fc1"))
    hidden = ag.relu(linear(hidden, params, f"{prefix}.fc2"))
    out = linear(hidden, params, f"{prefix}.fc3")
    return InvisibleEmbedding(ag.reshape(out, (c,)))
