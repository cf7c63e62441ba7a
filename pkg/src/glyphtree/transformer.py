"""Shared pre-norm transformer block used by both encoders.

Operates on (N, T, d) activations.  Attention can be restricted by an
additive mask (MASK_SENTINEL entries) and biased per (query, key) pair by
a learnable per-head scalar table indexed through `bias_idx`.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelParams


def multihead_attention(
    x: Tensor,
    params: ModelParams,
    prefix: str,
    heads: int,
    mask_add: np.ndarray | None = None,
    bias_table: Tensor | None = None,
    bias_idx: np.ndarray | None = None,
) -> Tensor:
    n, t, d = x.value.shape
    dk = d // heads

    def split(proj: Tensor) -> Tensor:
        return ad.swapaxes(ad.reshape(proj, (n, t, heads, dk)), 1, 2)  # (N,H,T,dk)

    q = split(ad.matmul(x, params[f"{prefix}.wq"]))
    k = split(ad.matmul(x, params[f"{prefix}.wk"]))
    v = split(ad.matmul(x, params[f"{prefix}.wv"]))
    scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / math.sqrt(dk))
    if bias_table is not None:
        # learnable scalar per (head, key azimuth); index 0 = self edges
        nb = bias_table.value.shape[-1]
        flat_idx = (
            np.arange(heads)[None, :, None, None] * nb + bias_idx[:, None, :, :]
        )
        flat_table = ad.reshape(bias_table, (-1,))
        scores = ad.add(scores, ad.gather(flat_table, flat_idx))
    if mask_add is not None:
        scores = ad.add(scores, Tensor(mask_add[:, None, :, :].astype(x.value.dtype)))
    attn = ad.softmax_lastdim(scores)
    out = ad.matmul(attn, v)  # (N,H,T,dk)
    merged = ad.reshape(ad.swapaxes(out, 1, 2), (n, t, d))
    return ad.matmul(merged, params[f"{prefix}.wo"])


def transformer_layer(
    x: Tensor,
    params: ModelParams,
    prefix: str,
    heads: int,
    mask_add: np.ndarray | None = None,
    bias_table: Tensor | None = None,
    bias_idx: np.ndarray | None = None,
) -> Tensor:
    h1 = ad.layernorm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = ad.add(x, multihead_attention(h1, params, prefix, heads, mask_add, bias_table, bias_idx))
    h2 = ad.layernorm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    m = ad.matmul(h2, params[f"{prefix}.mlp.w1"])
    m = ad.add(m, params[f"{prefix}.mlp.b1"])
    m = ad.gelu(m)
    m = ad.matmul(m, params[f"{prefix}.mlp.w2"])
    m = ad.add(m, params[f"{prefix}.mlp.b2"])
    return ad.add(x, m)


def encoder_stack(
    x: Tensor,
    params: ModelParams,
    side: str,
    layers: int,
    heads: int,
    mask_add: np.ndarray | None = None,
    bias_table: Tensor | None = None,
    bias_idx: np.ndarray | None = None,
) -> Tensor:
    for i in range(layers):
        x = transformer_layer(
            x, params, f"{side}.layers.{i}", heads, mask_add, bias_table, bias_idx
        )
    return ad.layernorm(x, params[f"{side}.final_ln.g"], params[f"{side}.final_ln.b"])


def project_and_normalize(pooled: Tensor, params: ModelParams, side: str) -> Tensor:
    out = ad.add(ad.matmul(pooled, params[f"{side}.proj.w"]), params[f"{side}.proj.b"])
    return ad.l2_normalize(out)
