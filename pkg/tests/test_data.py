"""Scene generation, degradations, and dataset round-trips."""

import numpy as np
import pytest

from camotta import data as D
from camotta import tensor as T


class TestGenScene:
    def test_deterministic(self):
        spec = D.SceneSpec(size=64, camouflage=0.5, seed=11)
        a_img, a_mask = D.gen_scene(spec)
        b_img, b_mask = D.gen_scene(D.SceneSpec(size=64, camouflage=0.5, seed=11))
        assert a_img.tobytes() == b_img.tobytes()
        assert a_mask.tobytes() == b_mask.tobytes()

    def test_zero_camouflage_invisible(self):
        img, mask = D.gen_scene(D.SceneSpec(size=64, camouflage=0.0, seed=3))
        bg_only, _ = D.gen_scene(D.SceneSpec(size=64, camouflage=1.0, seed=3))
        # the composited image equals the pure background everywhere
        rng = np.random.default_rng(3)
        bg = D._texture(rng, 64)
        np.testing.assert_array_equal(img, bg)

    def test_coverage_sweep(self):
        for seed in range(200):
            _, mask = D.gen_scene(D.SceneSpec(size=64, seed=seed))
            assert 0.05 <= mask.mean() <= 0.60

    def test_shapes_and_range(self):
        img, mask = D.gen_scene(D.SceneSpec(size=48, seed=5))
        assert img.shape == (3, 48, 48) and mask.shape == (48, 48)
        assert img.min() >= 0 and img.max() <= 1
        assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_bad_spec(self):
        with pytest.raises(T.ContractError):
            D.SceneSpec(camouflage=1.5)


class TestDegrade:
    def test_cr_unit_contrast_identity(self):
        img = np.random.default_rng(1).random((3, 16, 16))
        out = (img - img.mean()) * 1.0 + img.mean()
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_cr_severity_shrinks_contrast(self):
        img = np.random.default_rng(2).random((3, 16, 16)) * 0.5 + 0.25
        out = D.degrade(img, "cr", 3)
        assert out.std() == pytest.approx(img.std() * 0.4, rel=1e-6)
        assert out.mean() == pytest.approx(img.mean(), abs=1e-9)

    def test_gb_kernel_normalized(self):
        for sigma in (0.5, 1.0, 2.0, 3.0, 4.0):
            k = D._gaussian_kernel1d(sigma)
            assert len(k) == 2 * int(np.ceil(3 * sigma)) + 1
            assert k.sum() == pytest.approx(1.0, abs=1e-12)

    def test_gb_preserves_constant(self):
        img = np.full((3, 32, 32), 0.7)
        np.testing.assert_allclose(D.degrade(img, "gb", 4), 0.7, atol=1e-9)

    def test_gn_statistics(self):
        img = np.full((3, 128, 128), 0.5)
        out = D.degrade(img, "gn", 1, seed=9)
        assert abs(out.mean() - 0.5) < 0.01

    def test_deterministic_and_bounded(self):
        img = np.random.default_rng(4).random((3, 24, 24))
        for kind in D.DEGRADATION_KINDS:
            a = D.degrade(img, kind, 5, seed=7)
            b = D.degrade(img, kind, 5, seed=7)
            assert a.tobytes() == b.tobytes()
            assert a.shape == img.shape
            assert a.min() >= 0 and a.max() <= 1

    def test_unknown_kind(self):
        img = np.zeros((3, 8, 8))
        with pytest.raises(T.ContractError):
            D.degrade(img, "jpeg", 1)
        with pytest.raises(T.ContractError):
            D.degrade(img, "gn", 6)

    def test_blur_matches_naive_convolution(self):
        rng = np.random.default_rng(6)
        img = rng.random((1, 12, 12))
        sigma = 1.0
        k1 = D._gaussian_kernel1d(sigma)
        k2 = np.outer(k1, k1)
        r = len(k1) // 2
        padded = np.pad(img[0], r, mode="reflect")
        ref = np.zeros((12, 12))
        for i in range(12):
            for j in range(12):
                ref[i, j] = (padded[i:i + 2 * r + 1, j:j + 2 * r + 1] * k2).sum()
        np.testing.assert_allclose(D.gaussian_blur(img, sigma)[0], ref, atol=1e-12)


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        img, mask = D.gen_scene(D.SceneSpec(size=32, seed=8))
        D.save_sample(tmp_path, "s0", img, mask)
        items = list(D.load_dataset(tmp_path))
        assert len(items) == 1
        name, rimg, rmask = items[0]
        assert name == "s0"
        assert np.abs(rimg - img).max() <= 1.0 / 255.0 + 1e-12
        np.testing.assert_array_equal(rmask, mask)

    def test_ordering_stable(self, tmp_path):
        for name in ("b", "a", "c"):
            img, mask = D.gen_scene(D.SceneSpec(size=32, seed=1))
            D.save_sample(tmp_path, name, img, mask)
        names = [n for n, _, _ in D.load_dataset(tmp_path)]
        assert names == ["a", "b", "c"]

    def test_threshold_binarization(self, tmp_path):
        D.save_sample(tmp_path, "t", np.zeros((3, 8, 8)), np.full((8, 8), 200 / 255.0))
        _, _, mask = next(iter(D.load_dataset(tmp_path)))
        np.testing.assert_array_equal(mask, 1.0)

    def test_unmatched_skipped(self, tmp_path, caplog):
        img, mask = D.gen_scene(D.SceneSpec(size=32, seed=2))
        D.save_sample(tmp_path, "ok", img, mask)
        D.save_image(tmp_path / "images" / "orphan.png", img)
        items = list(D.load_dataset(tmp_path))
        assert [n for n, _, _ in items] == ["ok"]

    def test_empty_raises(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        with pytest.raises(T.ContractError):
            list(D.load_dataset(tmp_path))
