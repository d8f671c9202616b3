"""Synthetic camouflage scenes, image degradations, and dataset I/O.

Scenes place a smooth random blob filled with a mixture of the background
texture and an independent texture; the camouflage strength controls the
mixture, so strength 0 hides the object completely.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import ContractError, DomainError

log = logging.getLogger(__name__)

COVERAGE_RANGE = (0.05, 0.60)
MAX_RETRIES = 100

GN_SIGMA = {1: 0.02, 2: 0.04, 3: 0.08, 4: 0.12, 5: 0.18}
GB_SIGMA = {1: 0.5, 2: 1.0, 3: 2.0, 4: 3.0, 5: 4.0}
CR_FACTOR = {1: 0.8, 2: 0.6, 3: 0.4, 4: 0.3, 5: 0.2}
DEGRADATION_KINDS = ("gn", "gb", "cr")


@dataclass
class SceneSpec:
    size: int = 128
    camouflage: float = 0.5   # 0 = invisible object, 1 = fully distinct texture
    harmonics: int = 5        # Fourier-descriptor contour complexity
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.camouflage <= 1.0:
            raise ContractError("camouflage strength must lie in [0, 1]")
        if self.size < 16 or self.harmonics < 1:
            raise ContractError("size must be >= 16 and harmonics >= 1")


@dataclass
class SampleRecord:
    sample: str
    mode: str
    degradation: str
    severity: int
    s_measure: float
    e_measure: float
    wfbeta: float
    mae: float


def _texture(rng, size, cutoff=0.15):
    """Band-limited RGB noise texture in [0, 1] via low-pass filtered white noise."""
    noise = rng.normal(size=(3, size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    keep = np.exp(-(fy ** 2 + fx ** 2) / (2 * cutoff ** 2))
    tex = np.fft.ifft2(np.fft.fft2(noise) * keep).real
    lo = tex.min(axis=(1, 2), keepdims=True)
    hi = tex.max(axis=(1, 2), keepdims=True)
    return (tex - lo) / np.maximum(hi - lo, 1e-12)


def _blob_mask(rng, size, harmonics):
    """Closed smooth contour from random Fourier descriptors, rasterized."""
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    r0 = rng.uniform(0.12, 0.35) * size
    amps = rng.uniform(0.0, 0.25, size=harmonics) / np.arange(1, harmonics + 1)
    phases = rng.uniform(0.0, 2 * math.pi, size=harmonics)
    yy, xx = np.mgrid[0:size, 0:size]
    theta = np.arctan2(yy - cy, xx - cx)
    radius = np.full((size, size), r0)
    for k in range(harmonics):
        radius = radius + r0 * amps[k] * np.cos((k + 1) * theta + phases[k])
    dist = np.hypot(yy - cy, xx - cx)
    return (dist <= radius).astype(np.float64)


def gen_scene(spec):
    """Generate (image (3,S,S) in [0,1], binary mask (S,S)) for the spec."""
    rng = np.random.default_rng(spec.seed)
    bg = _texture(rng, spec.size)
    fg_tex = _texture(rng, spec.size, cutoff=0.25)
    lo, hi = COVERAGE_RANGE
    for _ in range(MAX_RETRIES):
        mask = _blob_mask(rng, spec.size, spec.harmonics)
        if lo <= mask.mean() <= hi:
            fill = (1.0 - spec.camouflage) * bg + spec.camouflage * fg_tex
            image = np.where(mask[None], fill, bg)
            return image, mask
    raise DomainError("could not satisfy the mask coverage constraint")


def _gaussian_kernel1d(sigma):
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, sigma):
    """Separable Gaussian blur with reflect padding, kernel size 2*ceil(3s)+1."""
    k = _gaussian_kernel1d(sigma)
    r = len(k) // 2
    out = np.asarray(image, dtype=np.float64)
    for axis in (-2, -1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="reflect")
        out = np.apply_along_axis(
            lambda v: np.convolve(v, k, mode="valid"), axis, padded)
    return out


def contrast_jitter(image, amount, rng):
    """Scale contrast about the mean by a factor drawn from [1 - amount, 1].

    Training-time augmentation; amount = 0 is the identity.
    """
    if not 0.0 <= amount < 1.0:
        raise ContractError("contrast_jitter amount must lie in [0, 1)")
    if amount == 0.0:
        return np.asarray(image, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    factor = rng.uniform(1.0 - amount, 1.0)
    mean = image.mean()
    return np.clip((image - mean) * factor + mean, 0.0, 1.0)


def degrade(image, kind, severity, seed=0):
    """Apply one degradation at integer severity 1..5; output stays in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.min() < -1e-9 or image.max() > 1 + 1e-9:
        raise ContractError("image values must lie in [0, 1]")
    if kind not in DEGRADATION_KINDS or severity not in (1, 2, 3, 4, 5):
        raise ContractError(f"unknown degradation {kind!r} severity {severity!r}")
    if kind == "gn":
        rng = np.random.default_rng(seed)
        out = image + rng.normal(scale=GN_SIGMA[severity], size=image.shape)
    elif kind == "gb":
        out = gaussian_blur(image, GB_SIGMA[severity])
    else:
        mean = image.mean()
        out = (image - mean) * CR_FACTOR[severity] + mean
    return np.clip(out, 0.0, 1.0)


# -- dataset I/O ---------------------------------------------------------------

def save_image(path, image):
    """8-bit PNG/PGM: (3,H,W) float in [0,1] as RGB, (H,W) as grayscale."""
    arr = np.asarray(image, dtype=np.float64)
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if quantized.ndim == 3:
        Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        Image.fromarray(quantized, mode="L").save(path)


def load_image(path):
    """Decode an 8-bit image to float64 in [0,1]; RGB -> (3,H,W), gray -> (H,W)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB" if im.mode in ("RGB", "RGBA") else "L"),
                         dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1) if arr.ndim == 3 else arr


def save_sample(root, name, image, mask):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    save_image(root / "images" / f"{name}.png", image)
    save_image(root / "masks" / f"{name}.png", mask)


def load_dataset(root):
    """Yield (name, image (3,H,W), binary mask (H,W)) in lexicographic order."""
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise ContractError(f"{root} must contain images/ and masks/")
    exts = (".png", ".pgm")
    images = {p.stem: p for p in sorted(img_dir.iterdir()) if p.suffix in exts}
    masks = {p.stem: p for p in sorted(mask_dir.iterdir()) if p.suffix in exts}
    matched = sorted(set(images) & set(masks))
    for stem in sorted(set(images) ^ set(masks)):
        log.warning("unmatched sample %r skipped", stem)
    if not matched:
        raise ContractError(f"no matched image/mask pairs under {root}")
    for stem in matched:
        image = load_image(images[stem])
        mask_raw = load_image(masks[stem])
        if mask_raw.ndim == 3:
            mask_raw = mask_raw.mean(axis=0)
        if image.shape[-2:] != mask_raw.shape:
            raise ContractError(f"sample {stem!r}: image and mask sizes differ")
        yield stem, image, (mask_raw >= 128.0 / 255.0).astype(np.float64)
