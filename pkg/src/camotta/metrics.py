"""Saliency evaluation metrics: MAE, S-measure, mean E-measure, weighted
F-measure. Standard formulations with alpha = 0.5, beta^2 = 0.3, and 256
E-measure thresholds; degenerate ground truths fall back to documented
conventions so each metric stays in [0, 1] and equals 1 only on a perfect
binary match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .tensor import ContractError

EPS = 1e-12
S_ALPHA = 0.5
BETA_SQ = 0.3
E_THRESHOLDS = 256


def _validate(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ContractError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.min() < -1e-9 or pred.max() > 1 + 1e-9:
        raise ContractError("prediction must lie in [0, 1]")
    if not np.all((gt == 0) | (gt == 1)):
        raise ContractError("ground truth must be binary")
    return np.clip(pred, 0.0, 1.0), gt


def mae(pred, gt):
    pred, gt = _validate(pred, gt)
    return float(np.abs(pred - gt).mean())


# -- S-measure -----------------------------------------------------------------

def _s_object_score(x):
    if x.size == 0:
        return 0.0
    mean, std = x.mean(), x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mean / (mean * mean + 1.0 + std + EPS)


def _s_object(pred, gt):
    fg = gt > 0.5
    mu = gt.mean()
    o_fg = _s_object_score(pred[fg])
    o_bg = _s_object_score(1.0 - pred[~fg])
    return mu * o_fg + (1.0 - mu) * o_bg


def _centroid(gt):
    ys, xs = np.nonzero(gt > 0.5)
    if ys.size == 0:
        h, w = gt.shape
        return h // 2, w // 2
    return int(round(ys.mean())), int(round(xs.mean()))


def _region_ssim(x, y):
    n = x.size
    if n <= 1:
        return 1.0 if np.allclose(x, y) else 0.0
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).sum() / (n - 1)
    vy = ((y - my) ** 2).sum() / (n - 1)
    cxy = ((x - mx) * (y - my)).sum() / (n - 1)
    num = 4.0 * mx * my * cxy
    den = (mx * mx + my * my) * (vx + vy)
    if num != 0.0:
        return num / (den + EPS)
    return 1.0 if den == 0.0 else 0.0


def _s_region(pred, gt):
    h, w = gt.shape
    cy, cx = _centroid(gt)
    cy, cx = max(cy, 1), max(cx, 1)
    total = h * w
    score = 0.0
    for sy, sx in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p, g = pred[sy, sx], gt[sy, sx]
        score += (p.size / total) * _region_ssim(p, g)
    return score


def s_measure(pred, gt, alpha=S_ALPHA):
    pred, gt = _validate(pred, gt)
    mu = gt.mean()
    # degenerate gts: score the complementary mean, the usual convention
    if mu == 0.0:
        return float(1.0 - pred.mean())
    if mu == 1.0:
        return float(pred.mean())
    s = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return float(max(s, 0.0))


# -- E-measure -----------------------------------------------------------------

def _alignment(fm, gt):
    if gt.sum() == 0:
        return 1.0 - fm
    if (1 - gt).sum() == 0:
        return fm.astype(np.float64)
    dfm = fm - fm.mean()
    dgt = gt - gt.mean()
    align = 2.0 * dfm * dgt / (dfm * dfm + dgt * dgt + EPS)
    return ((align + 1.0) ** 2) / 4.0


def e_measure(pred, gt, thresholds=E_THRESHOLDS):
    """Mean enhanced-alignment over binarization thresholds (k+1)/T, k=0..T-1.

    Normalized by HW (not HW-1) so a perfect binary match scores exactly 1.
    """
    pred, gt = _validate(pred, gt)
    n = gt.size
    scores = np.empty(thresholds)
    for k in range(thresholds):
        fm = (pred >= (k + 1.0) / thresholds).astype(np.float64)
        scores[k] = _alignment(fm, gt).sum() / n
    return float(scores.mean())


# -- weighted F-measure ----------------------------------------------------------

def _gauss_kernel(size=7, sigma=5.0):
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k1 = np.exp(-0.5 * (x / sigma) ** 2)
    k2 = np.outer(k1, k1)
    return k2 / k2.sum()


def weighted_fbeta(pred, gt, beta_sq=BETA_SQ):
    pred, gt = _validate(pred, gt)
    fg = gt > 0.5
    if not fg.any():
        return float(1.0 - pred.mean())  # no object: reward low false positives
    err = np.abs(pred - gt)
    dist, idx = ndimage.distance_transform_edt(~fg, return_indices=True)
    err_t = err.copy()
    err_t[~fg] = err[idx[0][~fg], idx[1][~fg]]
    err_smooth = ndimage.convolve(err_t, _gauss_kernel(), mode="constant")
    min_err = err.copy()
    take = fg & (err_smooth < err)
    min_err[take] = err_smooth[take]
    b = np.ones_like(err)
    b[~fg] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[~fg])
    ew = min_err * b
    tp_w = fg.sum() - ew[fg].sum()
    fp_w = ew[~fg].sum()
    recall = 1.0 - ew[fg].mean()
    precision = tp_w / (tp_w + fp_w + EPS)
    if recall <= 0.0 and precision <= 0.0:
        return 0.0
    q = (1.0 + beta_sq) * recall * precision / (beta_sq * precision + recall + EPS)
    return float(np.clip(q, 0.0, 1.0))


@dataclass
class MetricValues:
    s_measure: float
    e_measure: float
    wfbeta: float
    mae: float

    def as_tuple(self):
        return (self.s_measure, self.e_measure, self.wfbeta, self.mae)


def evaluate_metrics(pred, gt):
    return MetricValues(s_measure(pred, gt), e_measure(pred, gt),
                        weighted_fbeta(pred, gt), mae(pred, gt))
