"""Prototype consistency calibration: edge-weighted entropy confidence,
masked-average prototypes, variational fusion, KL regularization, and the
cosine metric-consistency losses.

Confidence maps and the self-supervised targets are treated as constants in
the gradient; only the feature/prototype path is differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import tensor as T
from .tensor import ContractError, Tensor, as_tensor

PROB_CLAMP = 1e-7
SIGMA_FLOOR = 1e-6
COSINE_EPS = 1e-8


class DegenerateRegionError(ValueError):
    """A class region is empty; the caller should fall back to the global mean."""


@dataclass
class ConfidenceMap:
    """Per-pixel reliability weights derived from edge-weighted entropy."""

    phi: np.ndarray
    entropy: np.ndarray
    edge: np.ndarray
    alpha: float


@dataclass
class Prototype:
    """Per-class feature centroid with its variational statistics."""

    class_id: int
    branch: str  # "o" (original view) | "r" (reconstructed view)
    vector: Tensor
    mu: Tensor = None
    sigma: Tensor = None
    z: Tensor = None


@dataclass
class FusedPrototype:
    class_id: int
    vector: Tensor
    a_o: Tensor
    a_r: Tensor
    mu_a_o: Tensor
    mu_a_r: Tensor
    sigma_a_o: Tensor
    sigma_a_r: Tensor
    gamma: Tensor


def edge_map(pred):
    """Boundary indicator: 3x3 morphological gradient of the binarized map."""
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    binary = p >= 0.5
    dil = ndimage.maximum_filter(binary, size=3, mode="nearest")
    ero = ndimage.minimum_filter(binary, size=3, mode="nearest")
    return (dil != ero).astype(np.float64)


def entropy_confidence(prob, edge, alpha=1.0):
    """Confidence weights whose sum is (HW-1)/HW by construction."""
    p = prob.data if isinstance(prob, Tensor) else np.asarray(prob, dtype=np.float64)
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    w = 1.0 + alpha * edge
    h = -w * (p * np.log(p) + (1.0 - p) * np.log(1.0 - p))
    n = h.size
    phi = (1.0 - h / max(h.sum(), 1e-300)) / n
    return ConfidenceMap(phi, h, np.asarray(edge, dtype=np.float64), float(alpha))


def map_prototype(feat, pred_labels):
    """Masked average pooling: per-class mean feature over its predicted region."""
    feat = as_tensor(feat)
    labels = np.asarray(pred_labels)
    protos = {}
    for m in (0, 1):
        mask = (labels == m).astype(np.float64)
        count = mask.sum()
        if count == 0:
            raise DegenerateRegionError(f"class {m} region is empty")
        protos[m] = T.tsum(feat * mask, axis=(1, 2)) / float(count)
    return protos


def weighted_prototype(feat, pred_labels, conf):
    """Confidence-weighted pooling; the denominator counts pixels, not weights,
    so a uniform confidence of value c scales the plain prototype by c."""
    feat = as_tensor(feat)
    labels = np.asarray(pred_labels)
    protos = {}
    for m in (0, 1):
        mask = (labels == m).astype(np.float64)
        count = mask.sum()
        if count == 0:
            raise DegenerateRegionError(f"class {m} region is empty")
        protos[m] = T.tsum(feat * (conf.phi * mask), axis=(1, 2)) / float(count)
    return protos


def global_mean_prototype(feat):
    feat = as_tensor(feat)
    return T.tmean(feat, axis=(1, 2))


def variational_encode(proto_vector, heads, eta):
    """Project a prototype to (mu, sigma) and reparameterize z = mu + eta*sigma."""
    p = as_tensor(proto_vector)
    d = p.shape[0]
    row = T.reshape(p, (1, d))
    mu = T.reshape(T.matmul(row, heads["mu_w"]), (d,)) + heads["mu_b"]
    sigma = T.softplus(T.reshape(T.matmul(row, heads["sigma_w"]), (d,)) + heads["sigma_b"])
    sigma = sigma + SIGMA_FLOOR
    z = mu + Tensor(np.asarray(eta, dtype=np.float64)) * sigma
    return mu, sigma, z


def variance_attention(variances, gamma):
    """Branch weights a_i = softmax(-gamma * sigma_a_i^2); smaller variance wins."""
    v = as_tensor(variances)
    g = as_tensor(gamma)
    return T.softmax(T.neg(g * v), axis=0)


def variational_fuse(z_o, z_r, weight_heads, gamma, class_id=0):
    """Variance-gated blend of the two branch latents into one prototype."""
    z_o, z_r = as_tensor(z_o), as_tensor(z_r)
    d = z_o.shape[0]
    stats = []
    for z in (z_o, z_r):
        out = T.matmul(T.reshape(z, (1, d)), weight_heads["w"]) + weight_heads["b"]
        mu_a = out[0:1, 0]
        sigma_a = T.softplus(out[0:1, 1]) + SIGMA_FLOOR
        stats.append((mu_a, sigma_a))
    var = T.concat([T.square(stats[0][1]), T.square(stats[1][1])], axis=0)
    a = variance_attention(var, gamma)
    fused = a[0:1] * z_o + a[1:2] * z_r
    return FusedPrototype(class_id, fused, a[0:1], a[1:2],
                          stats[0][0], stats[1][0], stats[0][1], stats[1][1],
                          as_tensor(gamma))


def point_estimate_fuse(z_o, z_r, params):
    """Deterministic linear scoring of each branch, softmaxed; ablation baseline."""
    z_o, z_r = as_tensor(z_o), as_tensor(z_r)
    d = z_o.shape[0]
    logit_o = T.matmul(T.reshape(z_o, (1, d)), params["w_o"]) + params["b_o"]
    logit_r = T.matmul(T.reshape(z_r, (1, d)), params["w_r"]) + params["b_r"]
    weights = T.softmax(T.concat([logit_o, logit_r], axis=0), axis=0)
    return T.reshape(weights, (2,))


def kl_loss(mu_sigma_pairs):
    """KL to the standard Gaussian prior, summed over branches, classes, coords."""
    total = None
    for mu, sigma in mu_sigma_pairs:
        mu, sigma = as_tensor(mu), as_tensor(sigma)
        if np.any(sigma.data <= 0):
            raise ContractError("sigma must be positive")
        term = 0.5 * T.tsum(T.square(mu) + T.square(sigma)
                            - T.log(T.square(sigma)) - 1.0)
        total = term if total is None else total + term
    return total


def metric_consistency(feat, fused_protos, tau=0.1):
    """Per-pixel cosine similarity to each class prototype and its soft labels.

    Returns (similarities (2,H,W), probabilities (2,H,W)); channel order is
    class 0 (background) then class 1 (foreground).
    """
    if tau <= 0:
        raise ContractError("tau must be positive")
    feat = as_tensor(feat)
    d, h, w = feat.shape
    # the eps guard lives under the sqrt so nonzero norms stay scale-invariant
    feat_norm = T.sqrt(T.tsum(T.square(feat), axis=0) + COSINE_EPS ** 2)
    sims = []
    for m in (0, 1):
        p = as_tensor(fused_protos[m])
        dot = T.tsum(feat * T.reshape(p, (d, 1, 1)), axis=0)
        p_norm = T.sqrt(T.tsum(T.square(p)) + COSINE_EPS ** 2)
        sims.append(T.reshape(dot / (feat_norm * p_norm), (1, h, w)))
    s = T.concat(sims, axis=0)
    probs = T.softmax(s / tau, axis=0)
    return s, probs


def _binary_ce(probs, target):
    """Pixelwise cross-entropy of 2-channel probabilities against a soft target.

    The target may be a live Tensor (the model's own soft prediction), in
    which case gradients flow into both sides of the consistency term.
    """
    t = as_tensor(target)
    p_fg = T.clamp(probs[1], PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_bg = T.clamp(probs[0], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return T.neg(T.log(p_fg) * t + T.log(p_bg) * (1.0 - t))


def prototype_losses(s_probs, target, s_rec_probs, target_rec, conf):
    """Consistency losses between prototype-similarity probabilities and the
    model's own soft predictions.

    Both arguments of each cross-entropy are differentiable: the similarity
    side pulls features toward their class prototype, while the prediction
    side is sharpened wherever the prototype evidence is confident. The
    original view pays a plain mean cross-entropy; the reconstructed view is
    weighted pixelwise by the confidence map.
    """
    l_pro = T.tmean(_binary_ce(s_probs, target))
    l_pro_rec = T.tsum(_binary_ce(s_rec_probs, target_rec) * conf.phi)
    return l_pro, l_pro_rec


def confidence_heatmap(conf):
    """Min-max normalized confidence weights for 8-bit heatmap export."""
    phi = conf.phi
    lo, hi = phi.min(), phi.max()
    return (phi - lo) / (hi - lo) if hi > lo else np.zeros_like(phi)
