"""2-D Fourier transforms, radius-based spectrum splitting, symmetric random
frequency masking, and the focal frequency loss.

Spectra are non-centered (DC at index (0,0)); the low/high split measures
distance from the centered DC. All functions are pure and differentiable
through the Tensor graph where it matters for the losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor, as_tensor, power, sqrt, square, tmean, tsum


@dataclass
class Spectrum:
    """Complex 2-D Fourier coefficients as separate real/imaginary planes (C,H,W)."""

    real: Tensor
    imag: Tensor

    @property
    def channels(self):
        return self.real.shape[0]

    @property
    def height(self):
        return self.real.shape[1]

    @property
    def width(self):
        return self.real.shape[2]

    def to_complex(self):
        return self.real.data + 1j * self.imag.data

    def energy(self):
        return float((self.real.data ** 2 + self.imag.data ** 2).sum())


@dataclass
class FreqMask:
    """Conjugate-symmetric binary frequency mask over one spectral region."""

    height: int
    width: int
    region: str  # "low" | "high"
    ratio: float
    seed: int
    radius: float
    grid: np.ndarray = field(repr=False)


def default_radius(height, width):
    """Low/high split radius: a quarter of the centered half-extent."""
    return 0.25 * (min(height, width) / 2.0)


def centered_distance_grid(height, width):
    """Per-bin distance from the centered DC, on non-centered (u, v) indexing."""
    u = np.arange(height)
    v = np.arange(width)
    du = ((u + height // 2) % height) - height // 2
    dv = ((v + width // 2) % width) - width // 2
    return np.hypot(du[:, None], dv[None, :])


def dft2(image):
    """Unnormalized 2-D DFT per channel of a real (C,H,W) image."""
    image = as_tensor(image)
    if image.ndim != 3:
        raise ContractError(f"dft2 expects (C,H,W), got {image.shape}")
    h, w = image.shape[1], image.shape[2]
    f = np.fft.fft2(image.data, axes=(-2, -1))

    def vjp_real(g):
        return ((h * w) * np.fft.ifft2(g, axes=(-2, -1)).real,)

    def vjp_imag(g):
        return ((h * w) * np.fft.ifft2(1j * g, axes=(-2, -1)).real,)

    real = Tensor._op(f.real.copy(), (image,), vjp_real)
    imag = Tensor._op(f.imag.copy(), (image,), vjp_imag)
    return Spectrum(real, imag)


def idft2(spectrum):
    """Inverse DFT with 1/(HW) normalization; returns the real part."""
    h, w = spectrum.height, spectrum.width
    c = spectrum.to_complex()
    y = np.fft.ifft2(c, axes=(-2, -1)).real.copy()

    def vjp(g):
        fg = np.fft.fft2(g, axes=(-2, -1)) / (h * w)
        return (fg.real.copy(), fg.imag.copy())

    return Tensor._op(y, (spectrum.real, spectrum.imag), vjp)


def inverse_imag_residue(spectrum):
    """Max |imaginary part| of the inverse transform, before it is discarded."""
    return float(np.abs(np.fft.ifft2(spectrum.to_complex(), axes=(-2, -1)).imag).max())


def split_spectrum(spectrum, radius):
    """Partition into (low, high) by centered distance; low + high == spectrum."""
    if radius < 0:
        raise ContractError("radius must be non-negative")
    d = centered_distance_grid(spectrum.height, spectrum.width)
    low_mask = (d <= radius).astype(np.float64)
    low = Spectrum(spectrum.real * low_mask, spectrum.imag * low_mask)
    high = Spectrum(spectrum.real * (1.0 - low_mask), spectrum.imag * (1.0 - low_mask))
    return low, high


def _symmetric_pairs(height, width, region_mask):
    """Conjugate-symmetric coefficient pairs with both members inside the region."""
    pairs = []
    for u in range(height):
        for v in range(width):
            pu, pv = (height - u) % height, (width - v) % width
            if (u, v) > (pu, pv):
                continue  # keep one canonical representative per pair
            if region_mask[u, v]:
                pairs.append(((u, v), (pu, pv)))
    return pairs


def make_freq_mask(height, width, region, ratio, seed, radius=None):
    """Random conjugate-symmetric binary mask zeroing `ratio` of one region."""
    if not 0.0 <= ratio <= 1.0:
        raise ContractError("mask ratio must lie in [0, 1]")
    if region not in ("low", "high"):
        raise ContractError(f"unknown region {region!r}")
    if radius is None:
        radius = default_radius(height, width)
    d = centered_distance_grid(height, width)
    region_mask = (d <= radius) if region == "low" else (d > radius)
    pairs = _symmetric_pairs(height, width, region_mask)
    k = int(round(ratio * len(pairs)))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pairs), size=k, replace=False) if k else []
    grid = np.ones((height, width))
    for idx in chosen:
        (u, v), (pu, pv) = pairs[idx]
        grid[u, v] = 0.0
        grid[pu, pv] = 0.0
    return FreqMask(height, width, region, float(ratio), int(seed), float(radius), grid)


def apply_spectrum_mask(image, mask, radius=None):
    """Suppress masked coefficients of one region and return the real image."""
    image = as_tensor(image)
    if radius is None:
        radius = mask.radius
    if image.shape[1] != mask.height or image.shape[2] != mask.width:
        raise ContractError("mask dimensions do not match the image")
    spec = dft2(image)
    low, high = split_spectrum(spec, radius)
    if mask.region == "low":
        degraded = Spectrum(low.real * mask.grid + high.real, low.imag * mask.grid + high.imag)
    else:
        degraded = Spectrum(low.real + high.real * mask.grid, low.imag + high.imag * mask.grid)
    return idft2(degraded)


def focal_frequency_loss(spectrum, spectrum_gt, beta=1.0):
    """Spectral distance weighted by its own magnitude: (1/HW) sum gamma^(beta+2).

    gamma is the per-bin complex distance; averaged over channels.
    """
    if beta < 0:
        raise ContractError("beta must be non-negative")
    if spectrum.real.shape != spectrum_gt.real.shape:
        raise ContractError("spectra dimensions do not match")
    h, w = spectrum.height, spectrum.width
    d2 = square(spectrum.real - spectrum_gt.real) + square(spectrum.imag - spectrum_gt.imag)
    weighted = power(d2, (beta + 2.0) / 2.0)
    per_channel = tsum(weighted, axis=(1, 2)) / float(h * w)
    return tmean(per_channel)


def spectrum_magnitude_images(spectrum):
    """Log-magnitude min-max normalized planes (real, imag) for debug dumps."""
    out = []
    for plane in (spectrum.real.data, spectrum.imag.data):
        mag = np.log1p(np.abs(plane)).mean(axis=0)
        lo, hi = mag.min(), mag.max()
        out.append((mag - lo) / (hi - lo) if hi > lo else np.zeros_like(mag))
    return tuple(out)
