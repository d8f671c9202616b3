"""Hierarchical masked-reconstruction losses: spatial patch masking, pixel MSE,
per-branch spectral losses, and their weighted aggregate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .tensor import ContractError, Tensor, as_tensor, square, tmean, tsum

DEFAULT_LAMBDA_LOW = 0.4
DEFAULT_LAMBDA_HIGH = 0.6


@dataclass
class SpatialMask:
    """Binary per-pixel mask constant within each patch; 0 marks masked patches."""

    height: int
    width: int
    patch: int
    ratio: float
    seed: int
    grid: np.ndarray = field(repr=False)

    @property
    def patch_grid(self):
        return self.height // self.patch, self.width // self.patch

    def patch_visibility(self):
        """Flattened per-patch visibility, row-major over the patch grid."""
        gh, gw = self.patch_grid
        return self.grid[:: self.patch, :: self.patch].reshape(gh * gw)

    def masked_patch_count(self):
        return int(round(self.ratio * np.prod(self.patch_grid)))


def make_spatial_mask(height, width, patch, ratio, seed):
    if height % patch or width % patch:
        raise ContractError("image dimensions must be divisible by the patch size")
    if not 0.0 <= ratio <= 1.0:
        raise ContractError("mask ratio must lie in [0, 1]")
    gh, gw = height // patch, width // patch
    n = gh * gw
    k = int(round(ratio * n))
    rng = np.random.default_rng(seed)
    masked = rng.choice(n, size=k, replace=False)
    patch_grid = np.ones(n)
    patch_grid[masked] = 0.0
    grid = np.repeat(np.repeat(patch_grid.reshape(gh, gw), patch, axis=0), patch, axis=1)
    return SpatialMask(height, width, patch, float(ratio), int(seed), grid)


def pixel_loss(recon, target, mask=None):
    """Full-image MSE; with a SpatialMask, mean over masked pixels only."""
    recon, target = as_tensor(recon), as_tensor(target)
    if recon.shape != target.shape:
        raise ContractError(f"shape mismatch: {recon.shape} vs {target.shape}")
    if mask is None:
        return tmean(square(recon - target))
    hole = 1.0 - mask.grid
    n = hole.sum() * recon.shape[0]
    if n == 0:
        return tmean(square(recon - target)) * 0.0
    return tsum(square(recon - target) * hole) / float(n)


@dataclass
class HrrLossBreakdown:
    pixel_rec: Tensor
    freq_constraint: Tensor
    freq_rec_low: Tensor
    pixel_con_low: Tensor
    freq_rec_high: Tensor
    pixel_con_high: Tensor
    lambda_low: float
    lambda_high: float
    total: Tensor

    def components(self):
        return {
            "pixel_rec": self.pixel_rec.item(),
            "freq_constraint": self.freq_constraint.item(),
            "freq_rec_low": self.freq_rec_low.item(),
            "pixel_con_low": self.pixel_con_low.item(),
            "freq_rec_high": self.freq_rec_high.item(),
            "pixel_con_high": self.pixel_con_high.item(),
        }


def hrr_total_loss(image, spatial_recon, low_recon, high_recon, radius=None,
                   lambda_low=DEFAULT_LAMBDA_LOW, lambda_high=DEFAULT_LAMBDA_HIGH,
                   beta=1.0, spatial_mask=None, masked_only=False):
    """Aggregate reconstruction loss over the spatial and two frequency branches.

    The spatial branch pays pixel reconstruction plus a full-spectrum
    constraint; each frequency branch pays a focal frequency loss restricted
    to its own region plus a pixel constraint against the raw image.
    """
    image = as_tensor(image)
    h, w = image.shape[1], image.shape[2]
    if radius is None:
        radius = spectral.default_radius(h, w)
    spec_gt = spectral.dft2(image)
    pix_mask = spatial_mask if masked_only else None

    pixel_rec = pixel_loss(spatial_recon, image, mask=pix_mask)
    freq_constraint = spectral.focal_frequency_loss(spectral.dft2(spatial_recon), spec_gt, beta)

    gt_low, gt_high = spectral.split_spectrum(spec_gt, radius)
    rec_low, _ = spectral.split_spectrum(spectral.dft2(low_recon), radius)
    _, rec_high = spectral.split_spectrum(spectral.dft2(high_recon), radius)

    freq_rec_low = spectral.focal_frequency_loss(rec_low, gt_low, beta)
    pixel_con_low = pixel_loss(low_recon, image)
    freq_rec_high = spectral.focal_frequency_loss(rec_high, gt_high, beta)
    pixel_con_high = pixel_loss(high_recon, image)

    total = (pixel_rec + freq_constraint
             + lambda_low * (freq_rec_low + pixel_con_low)
             + lambda_high * (freq_rec_high + pixel_con_high))
    return HrrLossBreakdown(pixel_rec, freq_constraint, freq_rec_low, pixel_con_low,
                            freq_rec_high, pixel_con_high, lambda_low, lambda_high, total)
