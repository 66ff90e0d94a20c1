"""Attention blocks and the small linear-layer helpers they share.

Layout convention: token matrices are row-major, one token per row
([tokens, channels]); weights use the x @ W orientation.  Attention
probability matrices can be collected through an optional ``trace`` list of
(name, Tensor) pairs, which the tests and the visualization command use.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from aisf import autograd as ag
from aisf.autograd import ParameterSet, Tensor
from aisf.errors import ConfigError, DimensionError


def init_linear(params: ParameterSet, name: str, d_in: int, d_out: int,
                rng: np.random.Generator, std: float = 0.02) -> None:
    params.add(f"{name}.w", Tensor(rng.normal(0.0, std, size=(d_in, d_out))))
    params.add(f"{name}.b", Tensor(np.zeros(d_out)))


def init_layer_norm(params: ParameterSet, name: str, dim: int) -> None:
    params.add(f"{name}.gain", Tensor(np.ones(dim)))
    params.add(f"{name}.bias", Tensor(np.zeros(dim)))


def init_attention(params: ParameterSet, prefix: str, dim: int,
                   rng: np.random.Generator) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{prefix}.{proj}", dim, dim, rng)


def init_encoder_layer(params: ParameterSet, prefix: str, dim: int, ffn_dim: int,
                       rng: np.random.Generator) -> None:
    init_attention(params, f"{prefix}.attn", dim, rng)
    init_layer_norm(params, f"{prefix}.ln1", dim)
    init_linear(params, f"{prefix}.ffn.fc1", dim, ffn_dim, rng)
    init_linear(params, f"{prefix}.ffn.fc2", ffn_dim, dim, rng)
    init_layer_norm(params, f"{prefix}.ln2", dim)


def init_decoder_layer(params: ParameterSet, prefix: str, dim: int,
                       rng: np.random.Generator, ffn_dim: int = 0) -> None:
    init_attention(params, f"{prefix}.self", dim, rng)
    init_layer_norm(params, f"{prefix}.ln1", dim)
    init_attention(params, f"{prefix}.cross", dim, rng)
    init_layer_norm(params, f"{prefix}.ln2", dim)
    if ffn_dim:
        init_linear(params, f"{prefix}.ffn.fc1", dim, ffn_dim, rng)
        init_linear(params, f"{prefix}.ffn.fc2", ffn_dim, dim, rng)
        init_layer_norm(params, f"{prefix}.ln3", dim)


def linear(x: Tensor, params: ParameterSet, name: str) -> Tensor:
    return ag.add(ag.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def multi_head_attention(x_q: Tensor, keys: Tensor, values: Tensor,
                         params: ParameterSet, prefix: str, heads: int,
                         trace: Optional[list] = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention; returns (output, head-mean weights)."""
    dim = x_q.shape[1]
    if keys.shape[1] != dim or values.shape[1] != dim:
        raise DimensionError(
            f"attention channel mismatch: queries {x_q.shape}, keys {keys.shape}")
    if dim % heads:
        raise ConfigError(f"embed dim {dim} not divisible by {heads} heads")
    q = linear(x_q, params, f"{prefix}.q")
    k = linear(keys, params, f"{prefix}.k")
    v = linear(values, params, f"{prefix}.v")
    d_head = dim // heads
    scale = 1.0 / math.sqrt(d_head)
    outs = []
    weights = []
    for h in range(heads):
        if heads == 1:
            qh, kh, vh = q, k, v
        else:
            qh = ag.narrow(q, 1, h * d_head, d_head)
            kh = ag.narrow(k, 1, h * d_head, d_head)
            vh = ag.narrow(v, 1, h * d_head, d_head)
        attn = ag.softmax(ag.mul(ag.matmul(qh, ag.transpose(kh)), scale), axis=1)
        weights.append(attn)
        outs.append(ag.matmul(attn, vh))
    merged = outs[0] if heads == 1 else ag.concat(outs, axis=1)
    mean_w = weights[0]
    for extra in weights[1:]:
        mean_w = ag.add(mean_w, extra)
    if heads > 1:
        mean_w = ag.mul(mean_w, 1.0 / heads)
    if trace is not None:
        trace.append((prefix, mean_w))
    return linear(merged, params, f"{prefix}.o"), mean_w


def _maybe_norm(x: Tensor, params: ParameterSet, name: str, use_ln: bool) -> Tensor:
    if not use_ln:
        return x
    return ag.layer_norm(x, x.shape[-1], params[f"{name}.gain"], params[f"{name}.bias"])


def feed_forward(x: Tensor, params: ParameterSet, prefix: str) -> Tensor:
    return linear(ag.relu(linear(x, params, f"{prefix}.fc1")), params, f"{prefix}.fc2")


def encoder_layer(x: Tensor, params: ParameterSet, prefix: str, heads: int,
                  use_ln: bool = True, trace: Optional[list] = None) -> Tensor:
    """Self-attention block: attention, residual, norm, FFN, residual, norm."""
    attn_out, _ = multi_head_attention(x, x, x, params, f"{prefix}.attn", heads, trace)
    x = _maybe_norm(ag.add(attn_out, x), params, f"{prefix}.ln1", use_ln)
    x = _maybe_norm(ag.add(feed_forward(x, params, f"{prefix}.ffn"), x),
                    params, f"{prefix}.ln2", use_ln)
    return x
