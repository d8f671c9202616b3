"""Cross-branch guidance through channel-wise non-local affinity matrices.

Affinities are C x C row-stochastic maps over flattened spatial features.
The two branches' affinities are fused by a tiny two-token self-attention
with elementwise shared projections, then filtered to the strongest
positions before being applied back to the detection feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor, as_tensor


@dataclass
class FusionWeights:
    """Per-position blend weights for the two affinity branches."""

    w1: Tensor  # (C, C)
    w2: Tensor  # (C, C)
    keep_fraction: float
    keep_mask: np.ndarray


def channel_nonlocal(x):
    """Row-stochastic channel affinity and the re-mixed feature.

    x: (C, H, W). Returns (x_hat, A) with A = row-softmax(Xf Xf^T / sqrt(HW)).
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ContractError(f"expected (C,H,W), got {x.shape}")
    c, h, w = x.shape
    xf = T.reshape(x, (c, h * w))
    scores = T.matmul(xf, T.transpose(xf)) / math.sqrt(h * w)
    a = T.softmax(scores, axis=1)
    x_hat = T.reshape(T.matmul(a, xf), (c, h, w))
    return x_hat, a


def fuse_affinities(a, a_rec, keep_fraction, params):
    """Blend two affinity maps into complementary weights with Top-K filtering.

    params holds shared elementwise projections 'wq', 'wk', 'wv' of length C*C.
    Retained positions satisfy w1 + w2 = 1; dropped positions are zeroed.
    """
    a, a_rec = as_tensor(a), as_tensor(a_rec)
    if a.shape != a_rec.shape:
        raise ContractError("affinity maps must share a shape")
    if not 0.0 < keep_fraction <= 1.0:
        raise ContractError("keep_fraction must lie in (0, 1]")
    c = a.shape[0]
    d = c * c
    tokens = T.concat([T.reshape(a, (1, d)), T.reshape(a_rec, (1, d))], axis=0)
    q = tokens * params["wq"]
    k = tokens * params["wk"]
    v = tokens * params["wv"]
    attn = T.softmax(T.matmul(q, T.transpose(k)) / math.sqrt(d), axis=1)
    scored = T.softmax(T.matmul(attn, v), axis=0)  # branch-axis partition of unity

    n_keep = int(round(keep_fraction * d))
    provisional = np.maximum(scored.data[0], scored.data[1])
    order = np.argsort(-provisional, kind="stable")
    keep = np.zeros(d)
    keep[order[:n_keep]] = 1.0
    w1 = T.reshape(scored[0:1, :] * keep, (c, c))
    w2 = T.reshape(scored[1:2, :] * keep, (c, c))
    return FusionWeights(w1, w2, float(keep_fraction), keep.reshape(c, c))


def init_fusion_params(channels, requires_grad=True):
    """Shared elementwise self-attention projections for C-channel affinities."""
    d = channels * channels
    return {name: Tensor(np.ones(d), requires_grad=requires_grad)
            for name in ("wq", "wk", "wv")}


def apply_guidance(x, x_hat, a, a_rec, weights):
    """Residual correction of x by the fused affinity applied along channels."""
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    c, h, w = x.shape
    a_upd = weights.w1 * a + weights.w2 * a_rec
    mixed = T.reshape(T.matmul(a_upd, T.reshape(x_hat, (c, h * w))), (c, h, w))
    return x + mixed
