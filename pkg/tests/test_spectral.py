"""Fourier transforms against the naive double-sum oracle, masking, focal loss."""

import numpy as np
import pytest

from camotta import spectral as sp
from camotta import tensor as T
from camotta.tensor import Tensor


def naive_dft2(image):
    """O(N^2) per-bin double sum, straight from the transform definition."""
    c, h, w = image.shape
    out = np.zeros((c, h, w), dtype=complex)
    hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for u in range(h):
        for v in range(w):
            phase = np.exp(-2j * np.pi * (hh * u / h + ww * v / w))
            out[:, u, v] = (image * phase).sum(axis=(1, 2))
    return out


def test_dft2_unit_impulse():
    img = np.zeros((1, 4, 4))
    img[0, 0, 0] = 1.0
    spec = sp.dft2(Tensor(img))
    np.testing.assert_allclose(spec.real.data, 1.0, atol=1e-12)
    np.testing.assert_allclose(spec.imag.data, 0.0, atol=1e-12)


def test_dft2_constant_image():
    c = 0.3
    spec = sp.dft2(Tensor(np.full((1, 4, 4), c)))
    assert spec.real.data[0, 0, 0] == pytest.approx(16 * c, abs=1e-12)
    rest = spec.to_complex().copy()
    rest[0, 0, 0] = 0
    assert np.abs(rest).max() < 1e-12


def test_dft2_matches_naive_oracle():
    rng = np.random.default_rng(17)
    img = rng.random((2, 8, 8))
    spec = sp.dft2(Tensor(img)).to_complex()
    np.testing.assert_allclose(spec, naive_dft2(img), atol=1e-9)


def test_round_trip():
    rng = np.random.default_rng(23)
    img = rng.random((1, 16, 16))
    back = sp.idft2(sp.dft2(Tensor(img)))
    assert np.abs(back.data - img).max() < 1e-6


def test_idft2_dc_only():
    h = w = 4
    real = np.zeros((1, h, w))
    real[0, 0, 0] = h * w
    back = sp.idft2(sp.Spectrum(Tensor(real), Tensor(np.zeros((1, h, w)))))
    np.testing.assert_allclose(back.data, 1.0, atol=1e-12)


def test_conjugate_symmetry_of_real_image():
    rng = np.random.default_rng(29)
    img = rng.random((1, 6, 8))
    f = sp.dft2(Tensor(img)).to_complex()[0]
    h, w = f.shape
    for u in range(h):
        for v in range(w):
            assert abs(f[u, v] - np.conj(f[(h - u) % h, (w - v) % w])) < 1e-9


def test_parseval():
    rng = np.random.default_rng(31)
    for _ in range(5):
        img = rng.random((1, 12, 12))
        spec = sp.dft2(Tensor(img))
        spatial = float((img ** 2).sum())
        spectral = spec.energy() / (12 * 12)
        assert abs(spectral - spatial) / spatial < 1e-6


def test_linearity():
    rng = np.random.default_rng(37)
    x, y = rng.random((1, 8, 8)), rng.random((1, 8, 8))
    a, b = 2.5, -0.7
    lhs = sp.dft2(Tensor(a * x + b * y)).to_complex()
    rhs = a * sp.dft2(Tensor(x)).to_complex() + b * sp.dft2(Tensor(y)).to_complex()
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestSplit:
    def test_radius_zero_keeps_only_dc(self):
        rng = np.random.default_rng(41)
        spec = sp.dft2(Tensor(rng.random((1, 8, 8))))
        low, high = sp.split_spectrum(spec, 0)
        mask = np.zeros((8, 8))
        mask[0, 0] = 1
        np.testing.assert_allclose(low.real.data[0] * (1 - mask), 0, atol=1e-12)
        assert low.real.data[0, 0, 0] == pytest.approx(spec.real.data[0, 0, 0])
        assert abs(high.real.data[0, 0, 0]) < 1e-12

    def test_radius_max_keeps_everything_low(self):
        rng = np.random.default_rng(43)
        spec = sp.dft2(Tensor(rng.random((1, 8, 8))))
        low, high = sp.split_spectrum(spec, 1000.0)
        np.testing.assert_allclose(low.to_complex(), spec.to_complex(), atol=1e-12)
        np.testing.assert_allclose(high.to_complex(), 0, atol=1e-12)

    def test_energy_partition(self):
        rng = np.random.default_rng(47)
        spec = sp.dft2(Tensor(rng.random((1, 10, 10))))
        low, high = sp.split_spectrum(spec, 2.0)
        assert abs(low.energy() + high.energy() - spec.energy()) < 1e-9 * spec.energy()


class TestFreqMask:
    def test_ratio_zero_all_ones(self):
        m = sp.make_freq_mask(16, 16, "low", 0.0, seed=1)
        np.testing.assert_array_equal(m.grid, 1.0)

    def test_ratio_one_zeroes_region(self):
        m = sp.make_freq_mask(16, 16, "low", 1.0, seed=1)
        region = sp.centered_distance_grid(16, 16) <= m.radius
        assert np.all(m.grid[region] == 0)
        assert np.all(m.grid[~region] == 1)

    def test_determinism(self):
        a = sp.make_freq_mask(32, 32, "high", 0.25, seed=99)
        b = sp.make_freq_mask(32, 32, "high", 0.25, seed=99)
        assert a.grid.tobytes() == b.grid.tobytes()

    def test_conjugate_symmetry_and_count(self):
        m = sp.make_freq_mask(16, 16, "low", 0.5, seed=5)
        h = w = 16
        for u in range(h):
            for v in range(w):
                assert m.grid[u, v] == m.grid[(h - u) % h, (w - v) % w]
        region = sp.centered_distance_grid(h, w) <= m.radius
        zero_fraction = (m.grid[region] == 0).mean()
        # within one coefficient-pair of the requested ratio
        assert abs(zero_fraction - 0.5) <= 2.0 / region.sum()

    def test_bad_ratio(self):
        with pytest.raises(T.ContractError):
            sp.make_freq_mask(8, 8, "low", 1.5, seed=0)


class TestApplyMask:
    def test_identity_mask(self):
        rng = np.random.default_rng(53)
        img = rng.random((1, 16, 16))
        m = sp.make_freq_mask(16, 16, "low", 0.0, seed=2)
        out = sp.apply_spectrum_mask(Tensor(img), m)
        assert np.abs(out.data - img).max() < 1e-6

    def test_dc_removal_zero_mean(self):
        rng = np.random.default_rng(59)
        img = rng.random((1, 8, 8))
        m = sp.make_freq_mask(8, 8, "low", 0.0, seed=3)
        m.grid[0, 0] = 0.0
        out = sp.apply_spectrum_mask(Tensor(img), m)
        assert abs(out.data.mean()) < 1e-9

    def test_matches_naive_dft_path(self):
        rng = np.random.default_rng(61)
        img = rng.random((1, 8, 8))
        m = sp.make_freq_mask(8, 8, "low", 0.25, seed=4)
        out = sp.apply_spectrum_mask(Tensor(img), m)
        # independent path: naive DFT, mask low region, naive inverse
        f = naive_dft2(img)
        d = sp.centered_distance_grid(8, 8)
        low_region = d <= m.radius
        fhat = np.where(low_region, f * m.grid, f)
        hh, ww = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
        rec = np.zeros((1, 8, 8), dtype=complex)
        for x in range(8):
            for y in range(8):
                phase = np.exp(2j * np.pi * (hh * x / 8 + ww * y / 8))
                rec[:, x, y] = (fhat * phase).sum(axis=(1, 2)) / 64
        np.testing.assert_allclose(out.data, rec.real, atol=1e-9)

    def test_symmetric_mask_keeps_reconstruction_real(self):
        rng = np.random.default_rng(67)
        img = rng.random((1, 16, 16))
        m = sp.make_freq_mask(16, 16, "high", 0.5, seed=6)
        spec = sp.dft2(Tensor(img))
        low, high = sp.split_spectrum(spec, m.radius)
        degraded = sp.Spectrum(low.real + high.real * m.grid, low.imag + high.imag * m.grid)
        assert sp.inverse_imag_residue(degraded) < 1e-9


class TestFocalFrequencyLoss:
    def test_identical_spectra_zero(self):
        rng = np.random.default_rng(71)
        spec = sp.dft2(Tensor(rng.random((1, 8, 8))))
        loss = sp.focal_frequency_loss(spec, spec)
        assert loss.item() == pytest.approx(0.0, abs=1e-15)

    def test_single_bin_closed_form(self):
        a = sp.Spectrum(Tensor(np.array([[[3.0]]])), Tensor(np.array([[[4.0]]])))
        b = sp.Spectrum(Tensor(np.zeros((1, 1, 1))), Tensor(np.zeros((1, 1, 1))))
        assert sp.focal_frequency_loss(a, b, beta=1.0).item() == pytest.approx(125.0, abs=1e-9)

    def test_beta_zero_reduces_to_mean_square_distance(self):
        a = sp.Spectrum(Tensor(np.array([[[1.0, 2.0]]])), Tensor(np.zeros((1, 1, 2))))
        b = sp.Spectrum(Tensor(np.zeros((1, 1, 2))), Tensor(np.zeros((1, 1, 2))))
        assert sp.focal_frequency_loss(a, b, beta=0.0).item() == pytest.approx(2.5, abs=1e-12)

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(73)
        for _ in range(5):
            a = sp.dft2(Tensor(rng.random((1, 6, 6))))
            b = sp.dft2(Tensor(rng.random((1, 6, 6))))
            assert sp.focal_frequency_loss(a, b).item() > 0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(79)
        target = rng.random((1, 8, 8))

        def f(x):
            return sp.focal_frequency_loss(sp.dft2(x), sp.dft2(Tensor(target)))

        assert T.grad_check(f, rng.random((1, 8, 8)), eps=1e-5) < 1e-3


def test_spectrum_magnitude_images_normalized():
    rng = np.random.default_rng(83)
    spec = sp.dft2(Tensor(rng.random((1, 8, 8))))
    re, im = sp.spectrum_magnitude_images(spec)
    for plane in (re, im):
        assert plane.min() >= 0 and plane.max() <= 1.0 + 1e-12
