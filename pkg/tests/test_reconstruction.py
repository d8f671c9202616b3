"""Spatial masking and the aggregate masked-reconstruction loss."""

import numpy as np
import pytest

from camotta import reconstruction as rc
from camotta import spectral as sp
from camotta import tensor as T
from camotta.tensor import Tensor


class TestSpatialMask:
    def test_ratio_zero_all_ones(self):
        m = rc.make_spatial_mask(32, 32, 16, 0.0, seed=1)
        np.testing.assert_array_equal(m.grid, 1.0)

    def test_exact_patch_count(self):
        m = rc.make_spatial_mask(64, 64, 16, 0.25, seed=2)
        zero_patches = (m.patch_visibility() == 0).sum()
        assert zero_patches == 4

    def test_determinism(self):
        a = rc.make_spatial_mask(64, 64, 16, 0.5, seed=3)
        b = rc.make_spatial_mask(64, 64, 16, 0.5, seed=3)
        assert a.grid.tobytes() == b.grid.tobytes()

    def test_constant_within_patches(self):
        m = rc.make_spatial_mask(48, 48, 16, 0.5, seed=4)
        for pi in range(3):
            for pj in range(3):
                block = m.grid[pi * 16:(pi + 1) * 16, pj * 16:(pj + 1) * 16]
                assert block.min() == block.max()

    def test_indivisible_raises(self):
        with pytest.raises(T.ContractError):
            rc.make_spatial_mask(50, 64, 16, 0.25, seed=0)


class TestPixelLoss:
    def test_identical_zero(self):
        x = np.random.default_rng(1).random((3, 8, 8))
        assert rc.pixel_loss(Tensor(x), Tensor(x)).item() == 0.0

    def test_constant_offset(self):
        x = np.zeros((1, 4, 4))
        assert rc.pixel_loss(Tensor(x + 0.3), Tensor(x)).item() == pytest.approx(0.09, abs=1e-12)

    def test_two_pixel_example(self):
        recon = Tensor(np.array([[[1.0, 0.0]]]))
        target = Tensor(np.zeros((1, 1, 2)))
        assert rc.pixel_loss(recon, target).item() == pytest.approx(0.5, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(T.ContractError):
            rc.pixel_loss(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 2, 3))))

    def test_masked_only_variant(self):
        m = rc.make_spatial_mask(4, 4, 2, 0.5, seed=7)
        recon = np.zeros((1, 4, 4))
        target = np.where(m.grid == 0, 1.0, 0.0)[None]
        # error lives only in masked patches: masked-only mean is 1, full mean 0.5
        assert rc.pixel_loss(Tensor(recon), Tensor(target), mask=m).item() == pytest.approx(1.0)
        assert rc.pixel_loss(Tensor(recon), Tensor(target)).item() == pytest.approx(0.5)


class TestHrrTotal:
    def _random_inputs(self, seed, n=8):
        rng = np.random.default_rng(seed)
        return [rng.random((1, n, n)) for _ in range(4)]

    def test_perfect_reconstruction_zero(self):
        img = np.random.default_rng(5).random((2, 8, 8))
        b = rc.hrr_total_loss(Tensor(img), Tensor(img.copy()), Tensor(img.copy()),
                              Tensor(img.copy()))
        for v in b.components().values():
            assert v == pytest.approx(0.0, abs=1e-9)
        assert b.total.item() == pytest.approx(0.0, abs=1e-9)

    def test_weighted_composition(self):
        # six unit components compose to 1 + 1 + 0.4*2 + 0.6*2 = 4.0
        one = Tensor(1.0)
        b = rc.HrrLossBreakdown(one, one, one, one, one, one, 0.4, 0.6,
                                one + one + 0.4 * (one + one) + 0.6 * (one + one))
        assert b.total.item() == pytest.approx(4.0, abs=1e-12)

    def test_total_matches_components(self):
        img, srec, lrec, hrec = self._random_inputs(9)
        b = rc.hrr_total_loss(Tensor(img), Tensor(srec), Tensor(lrec), Tensor(hrec))
        c = b.components()
        expected = (c["pixel_rec"] + c["freq_constraint"]
                    + 0.4 * (c["freq_rec_low"] + c["pixel_con_low"])
                    + 0.6 * (c["freq_rec_high"] + c["pixel_con_high"]))
        assert b.total.item() == pytest.approx(expected, rel=1e-12)

    def test_component_isolation(self):
        img, srec, lrec, hrec = self._random_inputs(13)
        base = rc.hrr_total_loss(Tensor(img), Tensor(srec), Tensor(lrec), Tensor(hrec))
        perturbed = rc.hrr_total_loss(Tensor(img), Tensor(srec), Tensor(lrec + 0.05),
                                      Tensor(hrec))
        cb, cp = base.components(), perturbed.components()
        assert cb["pixel_rec"] == pytest.approx(cp["pixel_rec"], abs=1e-12)
        assert cb["freq_constraint"] == pytest.approx(cp["freq_constraint"], abs=1e-12)
        assert cb["freq_rec_high"] == pytest.approx(cp["freq_rec_high"], abs=1e-12)
        assert cb["pixel_con_high"] == pytest.approx(cp["pixel_con_high"], abs=1e-12)
        assert cb["freq_rec_low"] != pytest.approx(cp["freq_rec_low"], abs=1e-9)
        assert cb["pixel_con_low"] != pytest.approx(cp["pixel_con_low"], abs=1e-9)

    def test_zero_iff_perfect(self):
        img, srec, lrec, hrec = self._random_inputs(17)
        b = rc.hrr_total_loss(Tensor(img), Tensor(srec), Tensor(lrec), Tensor(hrec))
        assert b.total.item() > 1e-9

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(19)
        img = rng.random((1, 8, 8))
        lrec, hrec = rng.random((1, 8, 8)), rng.random((1, 8, 8))

        def f(x):
            return rc.hrr_total_loss(Tensor(img), x, Tensor(lrec), Tensor(hrec)).total

        assert T.grad_check(f, rng.random((1, 8, 8)), eps=1e-5) < 1e-3

    def test_monotone_masking_expected_pixel_loss(self):
        # identity reconstructor on the masked input: loss grows with mask ratio
        rng = np.random.default_rng(23)
        means = []
        for ratio in (0.0, 0.25, 0.5, 1.0):
            vals = []
            for s in range(10):
                img = rng.random((1, 32, 32))
                m = rc.make_spatial_mask(32, 32, 16, ratio, seed=s)
                vals.append(rc.pixel_loss(Tensor(img * m.grid), Tensor(img)).item())
            means.append(np.mean(vals))
        assert all(b >= a - 1e-12 for a, b in zip(means, means[1:]))
